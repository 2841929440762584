//! Server-side virtual clients: a cluster of reference clients sampled from
//! the auxiliary pool, trained from each broadcast global model, whose
//! per-class accuracy over rounds forms a temporal matrix.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{sample_auxiliary, Dataset, LabelDistribution, Regime};
use crate::error::{Error, Result};
use crate::flsim::{local_train, privatize, ClientState, LdpConfig, LocalTrainConfig, RoundEvent, RoundObserver};
use crate::numerics::{MlpModel, ParameterVector, RngStream};

/// One member of the virtual cluster. The dataset itself is re-drawn from
/// the pool on demand with [`sample_auxiliary`], keyed by `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualClientSpec {
    pub id: usize,
    pub size: usize,
    pub regime: Regime,
    /// Realised label frequencies of the sampled dataset.
    pub true_distribution: LabelDistribution,
    pub seed: u64,
}

/// Per-round, per-class accuracy (`E x C`, row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalMatrix {
    classes: usize,
    values: Vec<f64>,
}

impl TemporalMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            values: Vec::new(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let classes = rows.first().map_or(0, Vec::len);
        let mut m = Self::new(classes);
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    /// Appends the next round. Entries must lie in `[0, 1]`.
    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.classes {
            return Err(Error::Shape(format!(
                "row of width {} for a {}-class matrix",
                row.len(),
                self.classes
            )));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("accuracy {v} outside [0, 1]")));
        }
        self.values.extend_from_slice(row);
        Ok(())
    }

    pub fn rounds(&self) -> usize {
        self.values.len().checked_div(self.classes).unwrap_or(0)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.classes..(t + 1) * self.classes]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mean of column `c` over all rounds.
    pub fn column_mean(&self, c: usize) -> f64 {
        let e = self.rounds();
        (0..e).map(|t| self.row(t)[c]).sum::<f64>() / e as f64
    }

    /// CSV with header `round,acc_0,...,acc_{C-1}`; rounds are 1-based.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round");
        for c in 0..self.classes {
            out.push_str(&format!(",acc_{c}"));
        }
        out.push('\n');
        for t in 0..self.rounds() {
            out.push_str(&(t + 1).to_string());
            for v in self.row(t) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Composition of the cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterPlan {
    pub iid: usize,
    pub quantity: usize,
    pub dirichlet: usize,
    /// Band width of IID members.
    pub delta: f64,
    /// Quantity members cycle through these label counts.
    pub c_f: Vec<usize>,
    /// Dirichlet members cycle through these concentrations.
    pub alpha: Vec<f64>,
    /// Sizes are drawn uniformly from `est * [1 - jitter, 1 + jitter]`.
    pub jitter: f64,
}

impl ClusterPlan {
    pub fn total(&self) -> usize {
        self.iid + self.quantity + self.dirichlet
    }

    /// Splits `n` members as evenly as possible over the three regimes.
    pub fn balanced(n: usize, delta: f64, c_f: Vec<usize>, alpha: Vec<f64>) -> Self {
        Self {
            iid: n / 3 + usize::from(n % 3 > 2),
            quantity: n / 3 + usize::from(n % 3 > 1),
            dirichlet: n / 3 + usize::from(!n.is_multiple_of(3)),
            delta,
            c_f,
            alpha,
            jitter: 0.2,
        }
    }
}

const MAX_REDRAWS: u64 = 50;

/// Draws the cluster. Regimes are interleaved so that any prefix of the
/// returned list has close to the planned proportions; ids are `0..n`.
pub fn build_cluster(pool: &Dataset, est_size: usize, plan: &ClusterPlan, stream: RngStream) -> Result<Vec<VirtualClientSpec>> {
    let classes = pool.classes();
    if plan.total() == 0 {
        return Err(Error::Validation("the cluster plan requests no clients".into()));
    }
    if plan.quantity > 0 && plan.c_f.is_empty() {
        return Err(Error::Validation("quantity members requested without a c_f list".into()));
    }
    if plan.dirichlet > 0 && plan.alpha.is_empty() {
        return Err(Error::Validation("dirichlet members requested without an alpha list".into()));
    }
    if !(0.0..1.0).contains(&plan.jitter) {
        return Err(Error::Validation(format!("jitter {} outside [0, 1)", plan.jitter)));
    }
    let regimes = interleave(plan);
    let mut specs = Vec::with_capacity(regimes.len());
    let mut per_kind = [0usize; 3];
    for (id, kind) in regimes.into_iter().enumerate() {
        let k = per_kind[kind];
        per_kind[kind] += 1;
        let regime = match kind {
            0 => Regime::Iid { delta: plan.delta },
            1 => Regime::Quantity {
                c_f: plan.c_f[k % plan.c_f.len()],
            },
            _ => Regime::Dirichlet {
                alpha: plan.alpha[k % plan.alpha.len()],
            },
        };
        regime
            .validate(classes)
            .map_err(|(key, m)| Error::Validation(format!("{key} {m}")))?;
        let mut rng = stream.child("vclient", id as u64).rng();
        let f = 1.0 + plan.jitter * (2.0 * rng.random::<f64>() - 1.0);
        let size = ((est_size as f64 * f).round() as usize).max(classes);
        let mut last = None;
        for _ in 0..MAX_REDRAWS {
            let mut spec = VirtualClientSpec {
                id,
                size,
                regime,
                true_distribution: LabelDistribution::uniform(classes),
                seed: rng.random(),
            };
            match sample_auxiliary(pool, &spec) {
                Ok(s) => {
                    spec.true_distribution = s.distribution;
                    last = Some(Ok(spec));
                    break;
                }
                Err(e @ Error::Capacity(_)) => last = Some(Err(e)),
                Err(e) => return Err(e),
            }
        }
        specs.push(last.expect("at least one draw")?);
    }
    Ok(specs)
}

/// Regime kinds (0 iid, 1 quantity, 2 dirichlet) spread evenly in order.
fn interleave(plan: &ClusterPlan) -> Vec<usize> {
    let counts = [plan.iid, plan.quantity, plan.dirichlet];
    let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(plan.total());
    for (kind, &n) in counts.iter().enumerate() {
        for i in 0..n {
            keyed.push(((i as f64 + 0.5) / n as f64, kind));
        }
    }
    keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, k)| k).collect()
}

/// Per-class recall of `model` on `eval_set`.
pub fn per_class_accuracy(model: &MlpModel, eval_set: &Dataset) -> Result<Vec<f64>> {
    let counts = eval_set.class_counts();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Validation(format!("eval set has no samples of class {c}")));
    }
    if eval_set.classes() != model.classes() {
        return Err(Error::Shape(format!(
            "eval set has {} classes, model {}",
            eval_set.classes(),
            model.classes()
        )));
    }
    let pred = model.predict(eval_set.features())?;
    let mut correct = vec![0usize; counts.len()];
    for (&p, &y) in pred.iter().zip(eval_set.labels()) {
        if p == y {
            correct[y] += 1;
        }
    }
    Ok(correct.iter().zip(&counts).map(|(&k, &n)| k as f64 / n as f64).collect())
}

/// How virtual clients train each round.
#[derive(Debug, Clone)]
pub struct ClusterRuntime {
    pub template: MlpModel,
    pub eval_set: Dataset,
    pub local: LocalTrainConfig,
    /// When set, each member noises its update the way real clients do and
    /// is scored on the noised parameters.
    pub mirror_ldp: Option<LdpConfig>,
}

struct Member {
    client: ClientState,
    matrix: TemporalMatrix,
}

/// Observer that advances every virtual client once per federation round.
/// Members only read the broadcast model and contribute nothing back.
pub struct ClusterObserver {
    runtime: ClusterRuntime,
    members: Vec<Member>,
}

impl ClusterObserver {
    pub fn new(specs: &[VirtualClientSpec], pool: &Dataset, runtime: ClusterRuntime) -> Result<Self> {
        let members = specs
            .iter()
            .map(|s| {
                let sample = sample_auxiliary(pool, s)?;
                let client = ClientState::new(s.id, sample.dataset, &runtime.local, s.seed)?;
                Ok(Member {
                    client,
                    matrix: TemporalMatrix::new(pool.classes()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { runtime, members })
    }

    /// Trains every member from `global` for round `round` and records a row.
    pub fn step(&mut self, round: usize, global: &ParameterVector) -> Result<()> {
        let model = self.runtime.template.with_params(global.clone())?;
        let rt = &self.runtime;
        self.members.par_iter_mut().try_for_each(|m| -> Result<()> {
            let up = local_train(&model, &m.client, round)?;
            let params = match &rt.mirror_ldp {
                Some(cfg) => {
                    let stream = RngStream::new(m.client.seed, 1).child("ldp", round as u64);
                    privatize(&up, global, cfg, stream)?.params
                }
                None => up.params,
            };
            let acc = per_class_accuracy(&model.with_params(params)?, &rt.eval_set)?;
            m.matrix.push_row(&acc)
        })
    }

    /// Matrices in member order.
    pub fn into_matrices(self) -> Vec<TemporalMatrix> {
        self.members.into_iter().map(|m| m.matrix).collect()
    }
}

impl RoundObserver for ClusterObserver {
    fn on_round(&mut self, event: RoundEvent) -> Result<()> {
        self.step(event.round, &event.broadcast)
    }
}

/// Runs the cluster against a recorded sequence of broadcast models
/// (`broadcasts[t - 1]` for round `t`), which is equivalent to attaching a
/// [`ClusterObserver`] to the live federation.
pub fn run_cluster(
    specs: &[VirtualClientSpec],
    pool: &Dataset,
    runtime: ClusterRuntime,
    broadcasts: &[ParameterVector],
) -> Result<Vec<TemporalMatrix>> {
    let mut obs = ClusterObserver::new(specs, pool, runtime)?;
    for (t, g) in broadcasts.iter().enumerate() {
        obs.step(t + 1, g)?;
    }
    Ok(obs.into_matrices())
}

/// Row `t` is the per-class accuracy of the victim's round-`t` upload.
pub fn record_victim(template: &MlpModel, uploads: &[&ParameterVector], eval_set: &Dataset) -> Result<TemporalMatrix> {
    if uploads.is_empty() {
        return Err(Error::Validation("no victim uploads recorded".into()));
    }
    let mut m = TemporalMatrix::new(eval_set.classes());
    for p in uploads {
        m.push_row(&per_class_accuracy(&template.with_params((*p).clone())?, eval_set)?)?;
    }
    Ok(m)
}

/// Writes `temporal/<id>.csv` for every matrix and `labels.json` mapping
/// id to true distribution.
pub fn persist_cluster(dir: impl AsRef<Path>, specs: &[VirtualClientSpec], matrices: &[TemporalMatrix]) -> Result<()> {
    let dir = dir.as_ref();
    let tdir = dir.join("temporal");
    std::fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
    for (s, m) in specs.iter().zip(matrices) {
        m.write_csv(tdir.join(format!("{}.csv", s.id)))?;
    }
    let labels: std::collections::BTreeMap<String, &LabelDistribution> =
        specs.iter().map(|s| (s.id.to_string(), &s.true_distribution)).collect();
    let path = dir.join("labels.json");
    let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(&mut f, &labels)?;
    f.write_all(b"\n").map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::gen_synthetic;
    use crate::numerics::{Activation, Tensor2};

    fn pool() -> Dataset {
        gen_synthetic(4, 6, 300, 3.0, RngStream::root(0)).unwrap()
    }

    fn plan(n: usize) -> ClusterPlan {
        ClusterPlan::balanced(n, 0.1, vec![2], vec![1.0])
    }

    #[test]
    fn cluster_ids_and_truth() {
        let p = pool();
        let specs = build_cluster(&p, 100, &plan(12), RngStream::root(1)).unwrap();
        assert_eq!(specs.len(), 12);
        for (i, s) in specs.iter().enumerate() {
            assert_eq!(s.id, i);
            assert!((80..=120).contains(&s.size));
            let sample = sample_auxiliary(&p, s).unwrap();
            assert_eq!(sample.distribution, s.true_distribution);
            assert_eq!(sample.counts.iter().sum::<usize>(), s.size);
        }
        let kinds: Vec<&str> = specs.iter().take(3).map(|s| s.regime.name()).collect();
        assert!(kinds.contains(&"iid") && kinds.contains(&"quantity") && kinds.contains(&"dirichlet"));
        assert_eq!(specs, build_cluster(&p, 100, &plan(12), RngStream::root(1)).unwrap());
    }

    #[test]
    fn zero_delta_iid_is_uniform() {
        let mut pl = plan(0);
        pl.iid = 5;
        pl.delta = 0.0;
        pl.jitter = 0.0;
        let specs = build_cluster(&pool(), 40, &pl, RngStream::root(2)).unwrap();
        for s in specs {
            assert_eq!(s.true_distribution, LabelDistribution::uniform(4));
        }
    }

    #[test]
    fn accuracy_of_constant_and_perfect_models() {
        let x = Tensor2::new(4, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let eval = Dataset::new(x, vec![0, 1, 0, 1], 2).unwrap();
        let mut m = MlpModel::zeros(&[1, 2], &[Activation::Identity]).unwrap();
        m.params_mut().segment_mut("layer0.bias").unwrap()[0] = 1.0;
        assert_eq!(per_class_accuracy(&m, &eval).unwrap(), vec![1.0, 0.0]);
        let w = m.params_mut().segment_mut("layer0.weight").unwrap();
        w.copy_from_slice(&[0.0, 2.0]);
        assert_eq!(per_class_accuracy(&m, &eval).unwrap(), vec![1.0, 1.0]);
        let missing = Dataset::new(Tensor2::zeros(1, 1), vec![0], 2).unwrap();
        assert!(per_class_accuracy(&m, &missing).is_err());
    }

    #[test]
    fn matrix_rows_and_csv() {
        let m = TemporalMatrix::from_rows(&[vec![0.5, 1.0], vec![0.25, 0.0]]).unwrap();
        assert_eq!(m.rounds(), 2);
        assert_eq!(m.to_csv(), "round,acc_0,acc_1\n1,0.5,1\n2,0.25,0\n");
        assert!(TemporalMatrix::from_rows(&[vec![1.5]]).is_err());
    }

    #[test]
    fn replay_has_one_row_per_round() {
        let p = pool();
        let specs = build_cluster(&p, 60, &plan(3), RngStream::root(3)).unwrap();
        let (eval, _) = p.split_per_class(10).unwrap();
        let template = MlpModel::init(&[6, 4], &[Activation::Identity], RngStream::root(4)).unwrap();
        let rt = ClusterRuntime {
            template: template.clone(),
            eval_set: eval.clone(),
            local: LocalTrainConfig::default(),
            mirror_ldp: None,
        };
        let g = vec![template.params().clone(); 5];
        let ms = run_cluster(&specs, &p, rt, &g).unwrap();
        assert!(ms.iter().all(|m| m.rounds() == 5 && m.classes() == 4));
        let v = record_victim(&template, &[template.params(), template.params()], &eval).unwrap();
        assert_eq!(v.row(0), v.row(1));
    }
}
