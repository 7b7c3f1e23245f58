use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ddm_core::dataset::{csv_header, write_csv};
use ddm_core::experiment::{self, Method, Protocol, Subset};
use ddm_core::metrics::{pair_errors_raw, PairErrors};
use ddm_core::stats::mean;
use ddm_core::{
    bootstrap_ci, embed, fit as fit_model, gram_target, load_csv, predict as predict_net, train as train_net,
    DataMatrix, DecileProfile, DiffusionModel, Dimension, GraphWarning, KernelConfig, Manifold, Mlp, NystromExtension,
    TrainConfig, ZeroDistance,
};

use crate::config::{pick, DataSection, DimSetting, EvaluateSection, FileConfig, KernelSection, TrainSection};
use crate::{
    CliError, DataArgs, EvaluateArgs, EvaluateFlags, ExtendArgs, FitArgs, GenerateArgs, KernelFlags, PredictArgs,
    ReproduceArgs, TrainArgs, TrainFlags,
};

type Result<T> = std::result::Result<T, CliError>;

const DEFAULT_N: usize = 2000;
const DEFAULT_Q: f64 = 5e-3;
const DEFAULT_ALPHA: f64 = 1.0;
const DEFAULT_T: u32 = 100;
const DEFAULT_CONFIDENCE: f64 = 0.95;
const DEFAULT_RESAMPLES: usize = 1000;

/// `dir/model.txt` with suffix `config.toml` gives `dir/model.config.toml`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn run_table(command: &str, paths: &[(&str, &Path)]) -> Option<toml::Table> {
    let mut t = toml::Table::new();
    t.insert("command".into(), command.into());
    for (k, p) in paths {
        t.insert((*k).into(), p.display().to_string().into());
    }
    Some(t)
}

fn parse_manifold(name: Option<String>) -> Result<Manifold> {
    let name = name.ok_or_else(|| CliError::usage("--dataset is required"))?;
    Ok(name.parse()?)
}

/// Loads `args.data`, splitting off the label column: the one named on the
/// command line or in the config, else `label` when the header has it.
fn read_data(args: &DataArgs, section: &mut DataSection) -> Result<DataMatrix> {
    section.label_column = pick(args.label_column.clone(), section.label_column.take());
    if section.label_column.is_none() {
        let header = csv_header(&args.data)?;
        if header.is_some_and(|h| h.iter().any(|c| c == "label")) {
            section.label_column = Some("label".into());
        }
    }
    Ok(load_csv(&args.data, section.label_column.as_deref())?)
}

fn report_warnings(warnings: &[GraphWarning]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn strict_check(strict: bool, count: usize) -> Result<()> {
    if strict && count > 0 {
        return Err(CliError::numerical(format!(
            "{count} conditioning warning(s) raised with --strict-warnings"
        )));
    }
    Ok(())
}

fn merge_kernel(flags: &KernelFlags, section: Option<KernelSection>) -> Result<KernelSection> {
    let mut k = section.unwrap_or_default();
    k.merge_bandwidth(flags.q, flags.sigma)?;
    if k.q.is_none() && k.sigma.is_none() {
        k.q = Some(DEFAULT_Q);
    }
    k.alpha = Some(pick(flags.alpha, k.alpha).unwrap_or(DEFAULT_ALPHA));
    k.t = Some(pick(flags.t, k.t).unwrap_or(DEFAULT_T));
    k.d = Some(pick(flags.d, k.d).unwrap_or(DimSetting(Dimension::Auto)));
    Ok(k)
}

fn merge_train(
    flags: &TrainFlags,
    section: Option<TrainSection>,
    base: &TrainConfig,
) -> Result<(TrainSection, TrainConfig)> {
    let mut s = section.unwrap_or_default();
    s.hidden = pick(flags.hidden.clone(), s.hidden);
    s.output_dim = pick(flags.output_dim, s.output_dim);
    s.learning_rate = pick(flags.learning_rate, s.learning_rate);
    s.batch_size = pick(flags.batch_size, s.batch_size);
    s.epochs = pick(flags.epochs, s.epochs);
    s.validation_fraction = pick(flags.validation_fraction, s.validation_fraction);
    s.seed = pick(flags.train_seed, s.seed);
    s.loss_scale = pick(flags.loss_scale, s.loss_scale);
    if flags.no_standardize {
        s.standardize_inputs = Some(false);
    }
    let config = s.resolve(base);
    config.validate()?;
    Ok((s, config))
}

fn merge_evaluate(flags: &EvaluateFlags, section: Option<EvaluateSection>) -> EvaluateSection {
    let mut s = section.unwrap_or_default();
    s.confidence = Some(pick(flags.confidence, s.confidence).unwrap_or(DEFAULT_CONFIDENCE));
    s.resamples = Some(pick(flags.resamples, s.resamples).unwrap_or(DEFAULT_RESAMPLES));
    s.seed = Some(pick(flags.bootstrap_seed, s.seed).unwrap_or(0));
    s.exclude_zero = Some(flags.exclude_zero || s.exclude_zero.unwrap_or(false));
    s
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let mut cfg = FileConfig::load(a.config.as_deref())?;
    let mut data = cfg.data.take().unwrap_or_default();
    data.dataset = pick(a.dataset, data.dataset);
    let manifold = parse_manifold(data.dataset.clone())?;
    let n = pick(a.n, data.n).unwrap_or(DEFAULT_N);
    let seed = pick(a.seed, data.seed).unwrap_or(0);
    if n == 0 {
        return Err(CliError::usage("--n must be at least 1"));
    }
    let sample = manifold.generate(n, seed)?;
    write_csv(&a.out, &sample, "x")?;

    data.n = Some(n);
    data.seed = Some(seed);
    cfg.data = Some(data);
    cfg.run = run_table("generate", &[("out", &a.out)]);
    cfg.write(&sibling(&a.out, "config.toml"))?;
    println!("wrote {n} {manifold} points to {}", a.out.display());
    Ok(())
}

fn likelihood_csv(model: &DiffusionModel) -> String {
    let mut out = String::from("d,loglik\n");
    if let Some(sel) = &model.selection {
        for (d, ll) in &sel.curve {
            let _ = writeln!(out, "{d},{ll}");
        }
    }
    out
}

pub fn fit(a: FitArgs) -> Result<()> {
    let mut cfg = FileConfig::load(a.config.as_deref())?;
    let mut section = cfg.data.take().unwrap_or_default();
    let data = read_data(&a.input, &mut section)?;
    let k = merge_kernel(&a.kernel, cfg.kernel.take())?;
    let (alpha, t) = (k.alpha.unwrap_or(DEFAULT_ALPHA), k.t.unwrap_or(DEFAULT_T));
    let kernel = match (k.sigma, k.q) {
        (Some(sigma), _) => KernelConfig::new(sigma, alpha, t)?,
        (None, q) => KernelConfig::from_quantile(&data, q.unwrap_or(DEFAULT_Q), alpha, t)?,
    };
    let dimension = k.d.map_or(Dimension::Auto, |d| d.0);
    let model = fit_model(&data, &kernel, dimension)?;
    report_warnings(model.warnings());

    model.save(&a.model)?;
    embed(&model).write_csv(&sibling(&a.model, "embedding.csv"), data.labels())?;
    if model.selection.is_none() {
        eprintln!("note: too few eigenvalues for a likelihood curve");
    }
    write_text(&sibling(&a.model, "likelihood.csv"), &likelihood_csv(&model))?;

    cfg.data = Some(section);
    cfg.kernel = Some(k);
    let mut run = run_table("fit", &[("data", &a.input.data), ("model", &a.model)]).unwrap_or_default();
    run.insert("sigma".into(), kernel.sigma.into());
    run.insert("selected_d".into(), (model.d as i64).into());
    cfg.run = Some(run);
    cfg.write(&sibling(&a.model, "config.toml"))?;
    println!("fit {} points, sigma {}, d {}", data.len(), kernel.sigma, model.d);
    strict_check(a.strict_warnings, model.warnings().len())
}

pub fn extend(a: ExtendArgs) -> Result<()> {
    let model = DiffusionModel::load(&a.model)?;
    let mut section = DataSection::default();
    let data = read_data(&a.input, &mut section)?;
    let embedding = NystromExtension::new(&model).extend_embedding(&data)?;
    embedding.write_csv(&a.out, data.labels())?;
    let cfg = FileConfig {
        run: run_table(
            "extend",
            &[("model", &a.model), ("data", &a.input.data), ("out", &a.out)],
        ),
        data: Some(section),
        ..Default::default()
    };
    cfg.write(&sibling(&a.out, "config.toml"))?;
    println!("extended {} points to {} coordinates", embedding.len(), embedding.dim());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = FileConfig::load(a.config.as_deref())?;
    let model = DiffusionModel::load(&a.model)?;
    let mut section = cfg.data.take().unwrap_or_default();
    let data = read_data(&a.input, &mut section)?;
    if data.points() != model.train.points() {
        return Err(CliError::data(format!(
            "{} is not the training sample of {}",
            a.input.data.display(),
            a.model.display()
        )));
    }
    let base = TrainConfig {
        output_dim: model.d,
        ..TrainConfig::default()
    };
    let (s, config) = merge_train(&a.train, cfg.train.take(), &base)?;
    let target = gram_target(&model)?;
    let (net, report) = train_net(&data, &target, &config)?;

    net.save(&a.net)?;
    report.write_csv(&sibling(&a.net, "report.csv"))?;
    cfg.data = Some(section);
    cfg.train = Some(s);
    cfg.run = run_table(
        "train",
        &[("model", &a.model), ("data", &a.input.data), ("net", &a.net)],
    );
    cfg.write(&sibling(&a.net, "config.toml"))?;
    eprintln!("trained in {:.1} s", report.wall_clock.as_secs_f64());
    println!(
        "epochs {}, best epoch {}, validation loss {:e} -> {:e}, checksum {}",
        config.epochs,
        report.best_epoch,
        report.initial_val_loss,
        report.best_val_loss(),
        report.checksum
    );
    Ok(())
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let net = Mlp::load(&a.net)?;
    let mut section = DataSection::default();
    let data = read_data(&a.input, &mut section)?;
    let embedding = predict_net(&net, &data)?;
    embedding.write_csv(&a.out, data.labels())?;
    let cfg = FileConfig {
        run: run_table("predict", &[("net", &a.net), ("data", &a.input.data), ("out", &a.out)]),
        data: Some(section),
        ..Default::default()
    };
    cfg.write(&sibling(&a.out, "config.toml"))?;
    println!("predicted {} points", embedding.len());
    Ok(())
}

struct Scores {
    pairs: PairErrors,
    mre: f64,
    ci: (f64, f64),
    deciles: DecileProfile,
}

fn score(pairs: PairErrors, s: &EvaluateSection) -> Result<Scores> {
    let ci = bootstrap_ci(
        &pairs.errors,
        s.confidence.unwrap_or(DEFAULT_CONFIDENCE),
        s.resamples.unwrap_or(DEFAULT_RESAMPLES),
        s.seed.unwrap_or(0),
    )?;
    Ok(Scores {
        mre: mean(&pairs.errors),
        deciles: DecileProfile::from_pairs(&pairs),
        ci,
        pairs,
    })
}

fn deciles_csv(d: &DecileProfile) -> String {
    let mut out = String::from("decile,mean_error,pairs\n");
    for (b, (m, c)) in d.means.iter().zip(&d.counts).enumerate() {
        let _ = writeln!(out, "{},{m},{c}", b + 1);
    }
    out
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut cfg = FileConfig::load(a.config.as_deref())?;
    let s = merge_evaluate(&a.eval, cfg.evaluate.take());
    let load = |path: &Path| -> Result<DataMatrix> {
        let args = DataArgs {
            data: path.to_path_buf(),
            label_column: None,
        };
        read_data(&args, &mut DataSection::default())
    };
    let test = load(&a.test)?;
    let reference = load(&a.reference)?;
    let zero = if s.exclude_zero == Some(true) {
        ZeroDistance::Exclude
    } else {
        ZeroDistance::Error
    };
    let sc = score(
        pair_errors_raw(test.points().view(), reference.points().view(), zero)?,
        &s,
    )?;

    let mut report = String::from("key,value\n");
    let rows: [(&str, String); 9] = [
        ("points", test.len().to_string()),
        ("pairs", sc.pairs.errors.len().to_string()),
        ("excluded_pairs", sc.pairs.excluded.to_string()),
        ("mre", sc.mre.to_string()),
        ("ci_low", sc.ci.0.to_string()),
        ("ci_high", sc.ci.1.to_string()),
        ("confidence", s.confidence.unwrap_or(DEFAULT_CONFIDENCE).to_string()),
        ("resamples", s.resamples.unwrap_or(DEFAULT_RESAMPLES).to_string()),
        ("peak_decile", sc.deciles.argmax().to_string()),
    ];
    for (k, v) in rows {
        let _ = writeln!(report, "{k},{v}");
    }
    write_text(&a.out, &report)?;
    write_text(&sibling(&a.out, "deciles.csv"), &deciles_csv(&sc.deciles))?;
    cfg.evaluate = Some(s);
    cfg.run = run_table(
        "evaluate",
        &[("test", &a.test), ("reference", &a.reference), ("out", &a.out)],
    );
    cfg.write(&sibling(&a.out, "config.toml"))?;
    println!(
        "MRE {:.2}% ({:.2}%, {:.2}%) over {} pairs",
        100.0 * sc.mre,
        100.0 * sc.ci.0,
        100.0 * sc.ci.1,
        sc.pairs.errors.len()
    );
    Ok(())
}

pub fn reproduce(a: ReproduceArgs) -> Result<()> {
    let mut cfg = FileConfig::load(a.config.as_deref())?;
    let mut data = cfg.data.take().unwrap_or_default();
    data.dataset = pick(a.dataset, data.dataset);
    let manifold = parse_manifold(data.dataset.clone())?;
    let bench = Protocol::benchmark(manifold);

    let mut k = cfg.kernel.take().unwrap_or_default();
    k.merge_bandwidth(a.kernel.q, a.kernel.sigma)?;
    if k.sigma.is_some() {
        return Err(CliError::usage(
            "reproduce derives the bandwidth from q; sigma is not accepted",
        ));
    }
    k.q = Some(k.q.unwrap_or(bench.q));
    k.alpha = Some(pick(a.kernel.alpha, k.alpha).unwrap_or(bench.alpha));
    k.t = Some(pick(a.kernel.t, k.t).unwrap_or(bench.t));
    let d = match pick(a.kernel.d, k.d) {
        None => bench.d,
        Some(DimSetting(Dimension::Fixed(d))) => d,
        Some(DimSetting(Dimension::Auto)) => {
            return Err(CliError::usage(
                "reproduce compares embeddings of a fixed dimension; give d as a number",
            ))
        }
    };
    k.d = Some(DimSetting(Dimension::Fixed(d)));

    data.n = Some(pick(a.n, data.n).unwrap_or(bench.n));
    data.n_a = Some(pick(a.n_a, data.n_a).unwrap_or_else(|| data.n.unwrap_or(bench.n) / 2));
    data.seed = Some(pick(a.seed, data.seed).unwrap_or(bench.seed));

    let base = TrainConfig {
        output_dim: d,
        ..bench.train.clone()
    };
    let (train_section, train_config) = merge_train(&a.train, cfg.train.take(), &base)?;
    if train_config.output_dim != d {
        return Err(CliError::usage(format!(
            "network output dimension {} differs from d = {d}",
            train_config.output_dim
        )));
    }
    let eval = merge_evaluate(&a.eval, cfg.evaluate.take());
    if eval.exclude_zero == Some(true) {
        return Err(CliError::usage(
            "reproduce always treats zero reference distances as errors",
        ));
    }

    let protocol = Protocol {
        manifold,
        n: data.n.unwrap_or(bench.n),
        n_a: data.n_a.unwrap_or(bench.n_a),
        q: k.q.unwrap_or(bench.q),
        alpha: k.alpha.unwrap_or(bench.alpha),
        t: k.t.unwrap_or(bench.t),
        d,
        seed: data.seed.unwrap_or(bench.seed),
        train: train_config,
        confidence: eval.confidence.unwrap_or(DEFAULT_CONFIDENCE),
        resamples: eval.resamples.unwrap_or(DEFAULT_RESAMPLES),
    };
    // the protocol seeds its bootstrap with the sample seed
    let eval = EvaluateSection {
        seed: Some(protocol.seed),
        ..eval
    };
    if a.eval.bootstrap_seed.is_some_and(|s| s != protocol.seed) {
        return Err(CliError::usage("reproduce seeds the bootstrap with --seed"));
    }

    std::fs::create_dir_all(&a.workdir).map_err(|e| CliError::data(format!("{}: {e}", a.workdir.display())))?;
    let out = experiment::run(&protocol)?;
    let warnings: Vec<GraphWarning> = out
        .union_model
        .warnings()
        .iter()
        .chain(out.model_a.warnings())
        .cloned()
        .collect();
    report_warnings(&warnings);

    let dir = &a.workdir;
    let labels_a = out.data.select(&out.index_a);
    let labels_b = out.data.select(&out.index_b);
    write_csv(&dir.join("data_a.csv"), &labels_a, "x")?;
    write_csv(&dir.join("data_b.csv"), &labels_b, "x")?;
    out.model_a.save(&dir.join("model_a.txt"))?;
    out.network.save(&dir.join("network.txt"))?;
    out.train_report.write_csv(&dir.join("train_report.csv"))?;
    write_text(&dir.join("likelihood.csv"), &likelihood_csv(&out.union_model))?;
    for (name, pair) in [
        ("reference", &out.reference),
        ("nystrom", &out.nystrom),
        ("ddm", &out.ddm),
    ] {
        pair[0].write_csv(&dir.join(format!("{name}_a.csv")), labels_a.labels())?;
        pair[1].write_csv(&dir.join(format!("{name}_b.csv")), labels_b.labels())?;
    }

    let mut summary = String::from("method,subset,mre,ci_low,ci_high,peak_decile\n");
    let mut deciles = String::from("method,subset,decile,mean_error,pairs\n");
    println!("{:<8} {:<6} {:>22}", "method", "subset", "MRE (CI)");
    for method in [Method::Nystrom, Method::Ddm] {
        for subset in [Subset::A, Subset::B] {
            let c = out.comparison(method, subset);
            let (m, s) = (method.name(), subset.name());
            let _ = writeln!(
                summary,
                "{m},{s},{},{},{},{}",
                c.mre,
                c.ci.0,
                c.ci.1,
                c.deciles.argmax()
            );
            for (b, (mean, count)) in c.deciles.means.iter().zip(&c.deciles.counts).enumerate() {
                let _ = writeln!(deciles, "{m},{s},{},{mean},{count}", b + 1);
            }
            println!(
                "{m:<8} {s:<6} {:>6.2}% ({:.2}%, {:.2}%)",
                100.0 * c.mre,
                100.0 * c.ci.0,
                100.0 * c.ci.1
            );
        }
    }
    write_text(&dir.join("summary.csv"), &summary)?;
    write_text(&dir.join("deciles.csv"), &deciles)?;
    for (stage, time) in &out.timings {
        eprintln!("{stage}: {:.1} s", time.as_secs_f64());
    }

    cfg.data = Some(data);
    cfg.kernel = Some(k);
    cfg.train = Some(train_section);
    cfg.evaluate = Some(eval);
    let mut run = run_table("reproduce", &[("workdir", dir)]).unwrap_or_default();
    run.insert("sigma".into(), out.union_model.config.sigma.into());
    cfg.run = Some(run);
    cfg.write(&dir.join("config.toml"))?;
    strict_check(a.strict_warnings, warnings.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sibling_replaces_the_extension() {
        assert_eq!(
            sibling(Path::new("out/model.txt"), "config.toml"),
            PathBuf::from("out/model.config.toml")
        );
        assert_eq!(
            sibling(Path::new("model"), "report.csv"),
            PathBuf::from("model.report.csv")
        );
    }
}
