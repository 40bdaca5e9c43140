use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, ensure, Context, Result};
use beblid::boosting::{build_unbalanced_set, train, StopReason, TrainConfig, TrainMode, TrainedEnsemble};
use beblid::datasets::{load_brown, load_pairs, load_patchset, save_pairs, save_patchset, synth_patchset, Jitter, PatchSet};
use beblid::descriptor::{
    describe, describe_patches, deserialize_model, format_descriptor_file, parse_descriptor_file, parse_keypoints,
    serialize_model, truncate_model, DescriptorFile, DescriptorModel,
};
use beblid::evaluation::{eval_matching, eval_retrieval, eval_verification, EvalReport, ImagePairTask, RetrievalTask};
use beblid::imaging::{integral_image, load_pgm, GrayImage};
use beblid::matching::{format_matches, match_nn, Metric};
use beblid::weaklearners::LabeledPair;
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{
    BenchArgs, Cli, Command, DescribeArgs, EvalArgs, EvalTask, MatchArgs, ModeArg, PatchSource, SynthArgs, TrainArgs,
    TruncateArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Describe(a) => cmd_describe(a),
        Command::Match(a) => cmd_match(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Truncate(a) => cmd_truncate(a),
    }
}

fn configure_threads(hint: Option<usize>) -> Result<()> {
    let threads = match std::env::var("BEBLID_THREADS") {
        Ok(v) => Some(v.trim().parse::<usize>().with_context(|| format!("BEBLID_THREADS={v:?} is not a count"))?),
        Err(_) => hint,
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_image(path: &Path) -> Result<GrayImage> {
    load_pgm(&read(path)?).with_context(|| format!("decoding {}", path.display()))
}

fn read_model(path: &Path) -> Result<DescriptorModel> {
    deserialize_model(&read(path)?).with_context(|| format!("decoding model {}", path.display()))
}

fn read_descriptors(path: &Path) -> Result<DescriptorFile> {
    parse_descriptor_file(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_source(source: &PatchSource) -> Result<PatchSet> {
    if let Some(dir) = &source.patches {
        return load_patchset(dir).with_context(|| format!("loading patch set {}", dir.display()));
    }
    let info = source.brown_info.as_ref().ok_or_else(|| anyhow!("no patch source given"))?;
    let mosaics = source.brown_mosaic.iter().map(|p| read_image(p)).collect::<Result<Vec<_>>>()?;
    load_brown(&mosaics, &read_text(info)?).context("loading Brown patches")
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let set = load_source(&a.source)?;
    let pairs = match (&a.pairs, a.positives, a.total) {
        (Some(path), _, _) => {
            let (pairs, count) = load_pairs(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))?;
            ensure!(count == set.len(), "pair file declares {count} patches but the patch set has {}", set.len());
            pairs
        }
        (None, Some(ratio), Some(total)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            build_unbalanced_set(&set, ratio, total, &mut rng).context("sampling training pairs")?
        }
        _ => bail!("give either --pairs or --positives with --total"),
    };
    let mode = match a.mode {
        ModeArg::Binary => TrainMode::BinaryCommonWeight,
        ModeArg::Real => TrainMode::RealAdaBoost,
    };
    let mut config = TrainConfig::new(mode, a.gamma, a.max_learners);
    config.n_candidates = a.candidates;
    config.scales = a.scales.clone();
    config.balanced_priors = a.balanced;
    config.resample_candidates = !a.fixed_candidates;
    config.seed = a.seed;
    info!("training on {} patches and {} pairs", set.len(), pairs.len());
    let ensemble = train(&set, &pairs, &config).context("training")?;
    let model = DescriptorModel::from_ensemble(&ensemble, a.scale_multiplier)?;
    write(&a.out, serialize_model(&model))?;

    let summary = train_summary(&ensemble, &config, pairs.len());
    print!("{summary}");
    if let Some(path) = &a.report {
        write(path, summary + &round_table(&ensemble))?;
    }
    if let Some(path) = &a.json {
        write(path, serde_json::to_string_pretty(&ensemble)?)?;
    }
    Ok(())
}

fn train_summary(e: &TrainedEnsemble, config: &TrainConfig, n_pairs: usize) -> String {
    let last = e.rounds.last();
    let mut s = String::new();
    let _ = writeln!(s, "mode={}", e.mode.name());
    let _ = writeln!(s, "K={}", e.len());
    let _ = writeln!(s, "gamma={}", e.gamma);
    let _ = writeln!(s, "pairs={n_pairs}");
    let _ = writeln!(s, "positive_ratio={:.6}", e.positive_ratio);
    let _ = writeln!(s, "balanced={}", config.balanced_priors);
    let _ = writeln!(s, "candidates={}", config.n_candidates);
    let _ = writeln!(s, "seed={}", e.seed);
    let stop = match e.stop_reason {
        StopReason::MaxLearners => "max_learners",
        StopReason::NoUsableWeakLearner => "no_usable_weak_learner",
    };
    let _ = writeln!(s, "stop_reason={stop}");
    let _ = writeln!(s, "final_loss={}", last.map_or(n_pairs as f64, |r| r.loss));
    let _ = writeln!(s, "final_balanced_loss={}", last.map_or(1.0, |r| r.balanced_loss));
    s
}

fn round_table(e: &TrainedEnsemble) -> String {
    let mut s = String::from("round,p1_row,p1_col,p2_row,p2_col,size,threshold,error,alpha,loss,balanced_loss\n");
    for r in &e.rounds {
        let f = r.learner.feature;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.round,
            f.p1.row,
            f.p1.col,
            f.p2.row,
            f.p2.col,
            f.size,
            r.learner.threshold,
            r.error,
            r.alpha,
            r.loss,
            r.balanced_loss
        );
    }
    s
}

fn cmd_describe(a: DescribeArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let file = if let Some(dir) = &a.patches {
        let set = load_patchset(dir).with_context(|| format!("loading patch set {}", dir.display()))?;
        let descriptors = describe_patches(set.patches(), &model)?;
        DescriptorFile { dims: model.len(), descriptors, kept: (0..set.len()).collect() }
    } else {
        let image = a.image.as_ref().ok_or_else(|| anyhow!("--image or --patches is required"))?;
        let kp_path = a.keypoints.as_ref().ok_or_else(|| anyhow!("--image requires --keypoints"))?;
        let img = read_image(image)?;
        let kps = parse_keypoints(&read_text(kp_path)?).with_context(|| format!("parsing {}", kp_path.display()))?;
        let (descriptors, kept) = describe(&integral_image(&img), &kps, &model)?;
        if kept.len() < kps.len() {
            info!("dropped {} of {} keypoints whose support leaves the image", kps.len() - kept.len(), kps.len());
        }
        DescriptorFile { dims: model.len(), descriptors, kept }
    };
    write(&a.out, format_descriptor_file(&file))
}

fn cmd_match(a: MatchArgs) -> Result<()> {
    let q = read_descriptors(&a.query)?;
    let t = read_descriptors(&a.train)?;
    let metric = Metric::for_mode(q.descriptors.mode());
    let matches = match_nn(&q.descriptors, &t.descriptors, metric, a.cross_check)?;
    info!("{} matches from {} queries", matches.len(), q.descriptors.len());
    write(&a.out, format_matches(&matches))
}

/// Splits `[NAME=]A,B` into its parts; unnamed sets are numbered.
fn parse_set(spec: &str, index: usize) -> Result<(String, PathBuf, PathBuf)> {
    let (name, rest) = match spec.split_once('=') {
        Some((n, r)) => (n.to_string(), r),
        None => (format!("set{index}"), spec),
    };
    let (a, b) = rest.split_once(',').ok_or_else(|| anyhow!("expected [NAME=]DESCRIPTORS,FILE, got {spec:?}"))?;
    Ok((name, PathBuf::from(a), PathBuf::from(b)))
}

/// Row of each original index in a descriptor file.
fn row_index(file: &DescriptorFile) -> HashMap<usize, usize> {
    file.kept.iter().enumerate().map(|(row, &orig)| (orig, row)).collect()
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let mut report = EvalReport::default();
    match &a.task {
        EvalTask::Verification { sets } => {
            for (i, spec) in sets.iter().enumerate() {
                let (name, desc, pairs_path) = parse_set(spec, i)?;
                let file = read_descriptors(&desc)?;
                let (pairs, _) =
                    load_pairs(&read_text(&pairs_path)?).with_context(|| format!("parsing {}", pairs_path.display()))?;
                let rows = row_index(&file);
                let row =
                    |i: usize| rows.get(&i).copied().ok_or_else(|| anyhow!("no descriptor for index {i} in {}", desc.display()));
                let mapped =
                    pairs.iter().map(|p| Ok(LabeledPair::new(row(p.x)?, row(p.y)?, p.label))).collect::<Result<Vec<_>>>()?;
                let r = eval_verification(&mapped, &file.descriptors, Metric::for_mode(file.descriptors.mode()))?;
                report.insert(&name, "ap", r.ap);
                report.insert(&name, "auc", r.auc);
                report.insert(&name, "fpr95", r.fpr95);
            }
        }
        EvalTask::Matching { tasks } => {
            let base = tasks.parent().unwrap_or(Path::new("."));
            let mut by_variant: Vec<(String, Vec<ImagePairTask>)> = Vec::new();
            for (n, line) in read_text(tasks)?.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let toks: Vec<&str> = line.split_whitespace().collect();
                ensure!(toks.len() == 4, "{}:{}: expected `variant reference target correspondences`", tasks.display(), n + 1);
                let task = load_matching_task(&base.join(toks[1]), &base.join(toks[2]), &base.join(toks[3]))?;
                match by_variant.iter_mut().find(|(v, _)| v == toks[0]) {
                    Some((_, list)) => list.push(task),
                    None => by_variant.push((toks[0].to_string(), vec![task])),
                }
            }
            ensure!(!by_variant.is_empty(), "{} lists no image pairs", tasks.display());
            for (variant, list) in &by_variant {
                let metric = Metric::for_mode(list[0].reference.mode());
                report.insert(variant, "map", eval_matching(list, metric)?);
            }
        }
        EvalTask::Retrieval { sets } => {
            for (i, spec) in sets.iter().enumerate() {
                let (name, desc, ids_path) = parse_set(spec, i)?;
                let file = read_descriptors(&desc)?;
                let ids = beblid::datasets::parse_ids(&read_text(&ids_path)?)?;
                let pool_ids = file
                    .kept
                    .iter()
                    .map(|&k| ids.get(k).copied().ok_or_else(|| anyhow!("no id for index {k} in {}", ids_path.display())))
                    .collect::<Result<Vec<_>>>()?;
                let mut counts: HashMap<u32, usize> = HashMap::new();
                for id in &pool_ids {
                    *counts.entry(*id).or_default() += 1;
                }
                // Every descriptor whose structure has another instance is a query.
                let queries: Vec<usize> = (0..pool_ids.len()).filter(|&j| counts[&pool_ids[j]] > 1).collect();
                ensure!(!queries.is_empty(), "{}: no structure has two instances", desc.display());
                let task = RetrievalTask {
                    queries: file.descriptors.select(&queries)?,
                    query_ids: queries.iter().map(|&j| pool_ids[j]).collect(),
                    pool: file.descriptors.clone(),
                    pool_ids,
                    query_pool_index: Some(queries),
                };
                report.insert(&name, "map", eval_retrieval(&task, Metric::for_mode(file.descriptors.mode()))?);
            }
        }
    }
    print!("{}", report.to_key_values());
    if let Some(path) = &a.csv {
        write(path, report.to_csv())?;
    }
    Ok(())
}

/// Correspondences are `i j` keypoint index rows; pairs whose keypoints were
/// dropped at extraction are skipped.
fn load_matching_task(reference: &Path, target: &Path, corr: &Path) -> Result<ImagePairTask> {
    let r = read_descriptors(reference)?;
    let t = read_descriptors(target)?;
    let (rr, tr) = (row_index(&r), row_index(&t));
    let mut correspondences = Vec::new();
    let mut skipped = 0;
    for (n, line) in read_text(corr)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str| s.parse::<usize>().with_context(|| format!("{}:{}: bad index {s:?}", corr.display(), n + 1));
        ensure!(toks.len() == 2, "{}:{}: expected two indices", corr.display(), n + 1);
        match (rr.get(&parse(toks[0])?), tr.get(&parse(toks[1])?)) {
            (Some(&a), Some(&b)) => correspondences.push((a, b)),
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        warn!("{}: skipped {skipped} correspondences with dropped keypoints", corr.display());
    }
    Ok(ImagePairTask { reference: r.descriptors, target: t.descriptors, correspondences })
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let img = read_image(&a.image)?;
    let kps = parse_keypoints(&read_text(&a.keypoints)?).with_context(|| format!("parsing {}", a.keypoints.display()))?;
    let model = read_model(&a.model)?;
    let once = || -> Result<usize> { Ok(describe(&integral_image(&img), &kps, &model)?.1.len()) };
    let kept = once()?;
    let mut times = Vec::with_capacity(a.repetitions as usize);
    for _ in 0..a.repetitions {
        let start = Instant::now();
        once()?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    times.sort_by(f64::total_cmp);
    let n = times.len();
    let median = if n % 2 == 1 { times[n / 2] } else { (times[n / 2 - 1] + times[n / 2]) / 2.0 };
    println!("image={}x{}", img.width(), img.height());
    println!("keypoints={}", kps.len());
    println!("described={kept}");
    println!("bits={}", model.len());
    println!("repetitions={}", a.repetitions);
    println!("mean_ms={mean:.4}");
    println!("median_ms={median:.4}");
    println!("descriptors_per_second={:.0}", kept as f64 / (median / 1e3));
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let jitter = Jitter { noise_sigma: a.noise, max_shift: a.shift, max_rotation_deg: a.rotation, max_brightness: a.brightness };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let set = synth_patchset(&mut rng, a.structures, a.instances, &jitter)?;
    save_patchset(&set, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    info!("wrote {} patches of {} structures to {}", set.len(), a.structures, a.out.display());
    if let (Some(path), Some(ratio), Some(total)) = (&a.pairs, a.positives, a.total) {
        let pairs = build_unbalanced_set(&set, ratio, total, &mut rng)?;
        write(path, save_pairs(&pairs, set.len()))?;
    }
    Ok(())
}

fn cmd_truncate(a: TruncateArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    write(&a.out, serialize_model(&truncate_model(&model, a.bits)?))
}
