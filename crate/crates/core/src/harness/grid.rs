use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::composition::{parse, validate, VoteMode};
use crate::dataset::Dataset;
use crate::harness::cv::{run_cv, CvConfig};
use crate::harness::step1::Step1Choice;
use crate::harness::store::{Failure, RecordKey, Store};
use crate::mitigation::MitigatorKind;
use crate::Result;

/// Candidate mitigators for the preliminary per-kind search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Step1Grid {
    pub pre: Vec<String>,
    #[serde(rename = "in")]
    pub in_: Vec<String>,
    pub post: Vec<String>,
    /// Estimator wrapped by the pre- and post-estimator candidates.
    pub base: String,
}

impl Default for Step1Grid {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        Step1Grid {
            pre: s(&[
                "Reweigh",
                "DIR(0.25)",
                "DIR(0.5)",
                "DIR(0.75)",
                "DIR(1)",
                "LFR(k=5, Ax=0.01, Ay=1, Az=50)",
            ]),
            in_: s(&["PR(eta=0.1)", "PR(eta=1)", "PR(eta=10)", "PR(eta=100)"]),
            post: s(&["CEO(cost=weighted)", "CEO(cost=fpr)", "CEO(cost=fnr)"]),
            base: "tree".into(),
        }
    }
}

impl Step1Grid {
    pub fn pipelines(&self) -> Vec<String> {
        let mut out: Vec<String> = self.pre.iter().map(|m| format!("Pr({m}, {})", self.base)).collect();
        out.extend(self.in_.iter().cloned());
        out.extend(self.post.iter().map(|m| format!("Post({m}, {})", self.base)));
        out
    }
}

/// Step-2 grid of pipeline templates.
///
/// Placeholders: `{pre}`, `{in}` and `{post}` take the dataset's step-1
/// mitigators; `{bag}`, `{boost}` and `{passthrough}` range over the listed
/// values; `{mode}` is the voting mode; `{members}` is the heterogeneous
/// palette and `{pre_members}`, `{in_members}`, `{post_members}` the palette
/// with each member mitigated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub templates: Vec<String>,
    pub bag_sizes: Vec<usize>,
    pub boost_sizes: Vec<usize>,
    pub passthrough: Vec<bool>,
    pub vote_mode: VoteMode,
    pub palette: Vec<String>,
}

pub const DEFAULT_TEMPLATES: &[&str] = &[
    "tree",
    "Pr({pre}, tree)",
    "{in}",
    "Post({post}, tree)",
    "Bag(tree, {bag})",
    "Pr({pre}, Bag(tree, {bag}))",
    "Bag(Pr({pre}, tree), {bag})",
    "Bag({in}, {bag})",
    "Post({post}, Bag(tree, {bag}))",
    "Bag(Post({post}, tree), {bag})",
    "Boost(tree, {boost})",
    "Pr({pre}, Boost(tree, {boost}))",
    "Boost(Pr({pre}, tree), {boost})",
    "Boost({in}, {boost})",
    "Post({post}, Boost(tree, {boost}))",
    "Boost(Post({post}, tree), {boost})",
    "Vote({members}, {mode})",
    "Pr({pre}, Vote({members}, {mode}))",
    "Vote({pre_members}, {mode})",
    "Vote({in_members}, {mode})",
    "Post({post}, Vote({members}, {mode}))",
    "Vote({post_members}, hard)",
    "Stack({members}, gbt, passthrough={passthrough})",
    "Pr({pre}, Stack({members}, gbt, passthrough={passthrough}))",
    "Stack({pre_members}, gbt, passthrough={passthrough})",
    "Stack({members}, Pr({pre}, gbt), passthrough=true)",
    "Stack({in_members}, gbt, passthrough={passthrough})",
    "Stack({members}, {in}, passthrough=true)",
    "Post({post}, Stack({members}, gbt, passthrough={passthrough}))",
    "Stack({post_members}, gbt, passthrough={passthrough})",
    "Stack({members}, Post({post}, gbt), passthrough=true)",
];

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            templates: DEFAULT_TEMPLATES.iter().map(|t| t.to_string()).collect(),
            bag_sizes: vec![1, 10, 100],
            boost_sizes: vec![1, 50, 500],
            passthrough: vec![true, false],
            vote_mode: VoteMode::Hard,
            palette: ["gbt", "tree", "knn", "logreg"].iter().map(|s| s.to_string()).collect(),
        }
    }
}

fn list(items: impl Iterator<Item = String>) -> String {
    format!("[{}]", items.collect::<Vec<_>>().join(", "))
}

impl GridSpec {
    /// Pipeline texts for one dataset, canonicalized where they parse and
    /// deduplicated in template order. Templates needing a mitigator kind the
    /// step-1 choice lacks are dropped with a warning.
    pub fn instantiate(&self, choice: Option<&Step1Choice>) -> Vec<String> {
        let config = |k: MitigatorKind| choice.and_then(|c| c.get(k)).map(|c| c.config.clone());
        let mitigators = [
            ("pre", config(MitigatorKind::Pre)),
            ("in", config(MitigatorKind::In)),
            ("post", config(MitigatorKind::Post)),
        ];
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for t in &self.templates {
            let mut text = t.clone();
            text = text.replace("{members}", &list(self.palette.iter().cloned()));
            text = text.replace("{mode}", &self.vote_mode.to_string());
            let mut missing = None;
            for (name, m) in &mitigators {
                let members_key = format!("{{{name}_members}}");
                let key = format!("{{{name}}}");
                if !text.contains(&members_key) && !text.contains(&key) {
                    continue;
                }
                let Some(m) = m else {
                    missing = Some(*name);
                    break;
                };
                let members = list(self.palette.iter().map(|l| match *name {
                    "pre" => format!("Pr({m}, {l})"),
                    "in" => m.clone(),
                    _ => format!("Post({m}, {l})"),
                }));
                text = text.replace(&members_key, &members).replace(&key, m);
            }
            if let Some(kind) = missing {
                log::warn!(
                    "{}: template `{t}` skipped, no {kind}-estimator mitigator chosen",
                    choice.map_or("?", |c| c.dataset.as_str())
                );
                continue;
            }
            let mut texts = vec![text];
            for (key, values) in [
                ("{bag}", self.bag_sizes.iter().map(|v| v.to_string()).collect::<Vec<_>>()),
                ("{boost}", self.boost_sizes.iter().map(|v| v.to_string()).collect()),
                ("{passthrough}", self.passthrough.iter().map(|v| v.to_string()).collect()),
            ] {
                if !texts[0].contains(key) {
                    continue;
                }
                texts = texts
                    .iter()
                    .flat_map(|t| values.iter().map(move |v| t.replace(key, v)))
                    .collect();
            }
            for text in texts {
                let text = parse(&text).map(|e| e.to_string()).unwrap_or(text);
                if seen.insert(text.clone()) {
                    out.push(text);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSummary {
    pub ran: usize,
    pub resumed: usize,
    pub failed: usize,
    pub records_written: usize,
}

/// Runs every pipeline on one dataset, appending to the store. Pipelines
/// whose records are all present already are skipped; failures are stored
/// and the run continues.
pub fn run_pipelines(ds: &Dataset, pipelines: &[String], cfg: &CvConfig, store: &mut Store) -> Result<GridSummary> {
    let mut summary = GridSummary::default();
    store.put_dataset(ds.info())?;
    for p in pipelines {
        let done = (0..cfg.n_trials).all(|trial| {
            (0..cfg.k).all(|fold| {
                store.contains(&RecordKey {
                    dataset: ds.name.clone(),
                    pipeline: p.clone(),
                    trial,
                    fold,
                    master_seed: cfg.master_seed,
                })
            })
        });
        if done {
            summary.resumed += 1;
            continue;
        }
        let outcome = parse(p).and_then(|e| {
            validate(&e)?;
            run_cv(&e, ds, cfg)
        });
        match outcome {
            Ok(records) => {
                summary.ran += 1;
                summary.records_written += store.append(&records)?;
            }
            Err(e) => {
                log::warn!("{}: pipeline `{p}` failed: {e}", ds.name);
                summary.failed += 1;
                store.record_failure(Failure {
                    dataset: ds.name.clone(),
                    pipeline: p.clone(),
                    master_seed: cfg.master_seed,
                    reason: e.to_string(),
                })?;
            }
        }
    }
    Ok(summary)
}

/// Instantiates the grid per dataset from its step-1 choice and runs it.
pub fn run_grid(
    datasets: &[Dataset],
    grid: &GridSpec,
    step1: &[Step1Choice],
    cfg: &CvConfig,
    store: &mut Store,
) -> Result<GridSummary> {
    let mut total = GridSummary::default();
    for ds in datasets {
        let choice = step1.iter().find(|c| c.dataset == ds.name);
        let pipelines = grid.instantiate(choice);
        log::info!("{}: {} grid pipelines", ds.name, pipelines.len());
        let s = run_pipelines(ds, &pipelines, cfg, store)?;
        total.ran += s.ran;
        total.resumed += s.resumed;
        total.failed += s.failed;
        total.records_written += s.records_written;
    }
    Ok(total)
}
