//! One function per subcommand. Each reads its inputs from the working
//! directory and writes its artifact back there.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use opf_verify::attack::{run_attack, AttackConfig, AttackObjective, AttackResult};
use opf_verify::bounds::{tighten_all, BoundsFile, BoundsTable, Budget, TightenOptions, TightenerRegistry};
use opf_verify::dataset::{generate_dataset, Dataset, Split};
use opf_verify::domain::DemandBox;
use opf_verify::grid::{bundled, load_network, FlowModel, Network};
use opf_verify::nn::{loss_l0, train, MlpModel, TrainConfig};
use opf_verify::verify::{verify_all_lines, verify_target, BnbLimits, Target, VerifyOptions, VerifyResult};
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::config::Workdir;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn load_grid(dir: &Workdir) -> Result<Network> {
    let path = dir.grid();
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading {} (run `gen-data` first)", path.display()))?;
    Ok(load_network(&text)?)
}

pub fn load_dataset(dir: &Workdir) -> Result<Dataset> {
    let path = dir.dataset();
    let file = File::open(&path).with_context(|| format!("opening {} (run `gen-data` first)", path.display()))?;
    Ok(Dataset::read_jsonl(BufReader::new(file))?)
}

pub fn load_model(dir: &Workdir) -> Result<MlpModel> {
    let path = dir.model();
    let text = fs::read_to_string(&path).with_context(|| format!("reading {} (run `train` first)", path.display()))?;
    Ok(MlpModel::from_json(&text)?)
}

/// The dataset's box when a dataset exists, else the standard load box.
pub fn load_domain(dir: &Workdir, network: &Network) -> Result<DemandBox> {
    if dir.dataset().exists() {
        return Ok(load_dataset(dir)?.header.domain);
    }
    Ok(network.demand_box(0.6, 1.0)?)
}

pub struct GenData {
    pub grid: String,
    pub n: usize,
    pub seed: u64,
}

pub fn gen_data(dir: &Workdir, args: &GenData) -> Result<String> {
    let text = if Path::new(&args.grid).is_file() {
        fs::read_to_string(&args.grid)?
    } else {
        bundled(&args.grid)
            .ok_or_else(|| anyhow!("unknown grid `{}`: not a file and not one of case2, case3, case5", args.grid))?
            .to_string()
    };
    let network = load_network(&text)?;
    info!(grid = %args.grid, n = args.n, seed = args.seed, "generating dataset");
    let dataset = generate_dataset(&network, args.n, args.seed)?;
    fs::create_dir_all(&dir.0)?;
    write_json(&dir.grid(), network.document())?;
    let mut out = BufWriter::new(File::create(dir.dataset())?);
    dataset.write_jsonl(&mut out)?;
    out.flush()?;
    Ok(format!(
        "wrote {} ({} samples, {} infeasible dropped)",
        dir.dataset().display(),
        dataset.len(),
        dataset.header.dropped.len()
    ))
}

/// Test-set quality of a trained proxy, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub best_epoch: usize,
    pub seed: u64,
    pub train_seed: u64,
    /// Mean L1 prediction error relative to the maximum total load.
    pub test_l0_pct: f64,
    /// Mean power-balance violation relative to the maximum total load.
    pub v_pb_avg_pct: f64,
    /// Mean line-flow violation relative to each line's capacity.
    pub v_l_avg_pct: f64,
}

pub fn train_stage(dir: &Workdir, hidden: &[usize], config: &TrainConfig, init_seed: u64) -> Result<String> {
    let network = load_grid(dir)?;
    let dataset = load_dataset(dir)?;
    let flows = FlowModel::from_network(&network)?;
    let init = MlpModel::for_network(&network, hidden, init_seed)?;
    info!(?hidden, epochs = config.max_epochs, "training");
    let (model, history) = train(&init, &dataset, config)?;
    let (xs, ys) = dataset.arrays(Split::Test);
    if xs.is_empty() {
        bail!("dataset has no test samples");
    }
    let preds = xs.iter().map(|x| model.predict(x)).collect::<Result<Vec<_>, _>>()?;
    let max_total = dataset.header.domain.max_total();
    let pb: f64 = xs
        .iter()
        .zip(&preds)
        .map(|(x, p)| Target::PowerBalance.violation(x, p))
        .sum::<f64>()
        / xs.len() as f64;
    let mut line_sum = 0.0;
    for (x, p) in xs.iter().zip(&preds) {
        for (f, cap) in flows.flows(p, x).iter().zip(&flows.limits) {
            line_sum += (f.abs() - cap).max(0.0) / cap;
        }
    }
    let report = TrainReport {
        hidden: hidden.to_vec(),
        epochs: history.train_loss.len(),
        best_epoch: history.best_epoch,
        seed: init_seed,
        train_seed: config.seed,
        test_l0_pct: 100.0 * loss_l0(&preds, &ys)? / max_total,
        v_pb_avg_pct: 100.0 * pb / max_total,
        v_l_avg_pct: 100.0 * line_sum / (xs.len() * flows.num_lines().max(1)) as f64,
    };
    fs::write(dir.model(), model.to_json() + "\n")?;
    write_json(&dir.train_report(), &report)?;
    Ok(format!(
        "wrote {} ({} epochs, best {}, test L0 {:.3}%)",
        dir.model().display(),
        report.epochs,
        report.best_epoch,
        report.test_l0_pct
    ))
}

pub fn objective_name(o: AttackObjective) -> &'static str {
    match o {
        AttackObjective::PowerBalance => "pb",
        AttackObjective::LineFlow => "flow",
    }
}

pub fn attack_stage(dir: &Workdir, config: &AttackConfig) -> Result<String> {
    let network = load_grid(dir)?;
    let dataset = load_dataset(dir)?;
    let model = load_model(dir)?;
    let flows = FlowModel::from_network(&network)?;
    let result = run_attack(&model, &flows, &dataset.header.domain, &dataset, config)?;
    let path = dir.attack(objective_name(config.objective));
    write_json(&path, &result)?;
    Ok(format!(
        "wrote {} (dataset best {:.6}, PGA best {:.6})",
        path.display(),
        result.dataset_best,
        result.best_value
    ))
}

pub fn tighten_stage(dir: &Workdir, method: &str, budget_sec: f64) -> Result<String> {
    let network = load_grid(dir)?;
    let model = load_model(dir)?;
    let domain = load_domain(dir, &network)?;
    let registry = TightenerRegistry::default();
    let name = registry.get(method)?.name();
    let budget = Duration::try_from_secs_f64(budget_sec).map_err(|e| anyhow!("invalid --budget-sec {budget_sec}: {e}"))?;
    let options = TightenOptions { per_neuron_budget: Budget::time(budget), ..Default::default() };
    let stack = model.relu_stack();
    info!(method = name, "tightening bounds");
    let start = Instant::now();
    let table = tighten_all(&stack, &domain, name, &options)?;
    let file = table.to_file(name, (name == "obbt-milp").then_some(budget), start.elapsed().as_secs_f64());
    let path = dir.bounds(name);
    write_json(&path, &file)?;
    Ok(format!("wrote {} ({} unstable of {} neurons)", path.display(), table.num_unstable(), file.per_neuron.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    PowerBalance,
    Line(usize),
    AllLines,
}

pub struct VerifyArgs<'a> {
    pub target: TargetKind,
    pub bounds: Option<&'a Path>,
    pub warm: Option<&'a Path>,
    pub limits: BnbLimits,
}

pub fn verify_stage(dir: &Workdir, args: &VerifyArgs<'_>) -> Result<(String, VerifyResult)> {
    let network = load_grid(dir)?;
    let model = load_model(dir)?;
    let domain = load_domain(dir, &network)?;
    let flows = FlowModel::from_network(&network)?;
    let stack = model.relu_stack();
    let (table, bounds_method) = match args.bounds {
        Some(path) => {
            let file: BoundsFile = read_json(path)?;
            (file.to_table(&stack.widths())?, file.method)
        }
        None => (BoundsTable::unbounded(&stack.widths()), "none".to_string()),
    };
    let warm: Option<AttackResult> = args.warm.map(read_json).transpose()?;
    let options = VerifyOptions {
        limits: args.limits,
        bounds_method: bounds_method.clone(),
        warm_source: if warm.is_some() { "pga".into() } else { "none".into() },
    };
    info!(target = ?args.target, bounds = %bounds_method, "verifying");
    let result = match args.target {
        TargetKind::AllLines => {
            let warm_for = |e: usize| -> Option<Vec<f64>> {
                let target = Target::line(&flows, e).ok()?;
                warm.as_ref().map(|w| w.warm_for(&target))
            };
            verify_all_lines(&stack, &flows, &table, &domain, &warm_for, &options)?
        }
        kind => {
            let target = match kind {
                TargetKind::Line(e) => Target::line(&flows, e)?,
                _ => Target::PowerBalance,
            };
            let pd = warm.as_ref().map(|w| w.warm_for(&target));
            verify_target(&stack, &table, &domain, &target, pd.as_deref(), &options)?
        }
    };
    let path = dir.verify(&result.target, &bounds_method);
    write_json(&path, &result)?;
    Ok((
        format!(
            "wrote {} (primal {:.6}, dual {:.6}, {:?}, {} nodes)",
            path.display(),
            result.primal,
            result.dual,
            result.status,
            result.nodes
        ),
        result,
    ))
}
