//! Subcommand implementations. Each one re-reads what it wrote before
//! returning, then records a manifest.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use ldwnet_core::hsi::{load_scene, normalize, save_scene, synthetic_scene, stratified_split, Split, SyntheticSpec};
use ldwnet_core::network::{init_parameters, load_checkpoint, save_checkpoint};
use ldwnet_core::render::{read_ppm, render_labels, write_ppm};
use ldwnet_core::trainer::{self, evaluate, predict_pixels, sweep_csv, EvalReport};
use ldwnet_core::{
    analyze_network, build_network, AlphaMode, Error, HsiScene, LossConfig, NetworkConfig, Normalization,
    OptimizerKind, Real, SplitPlan, TrainConfig,
};

use crate::manifest::Recorder;
use crate::{
    AlphaModeArg, AnalyzeArgs, EvalArgs, EvalSplit, FitArgs, LossArg, MapArgs, NormArg, OptimArg, Precision,
    RunArgs, SceneArgs, SplitArgs, SweepArgs, SynthArgs, SynthKind, TrainArgs,
};

fn prepare(run: &RunArgs) -> Result<()> {
    if run.threads > 0 {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(run.threads).build_global();
    }
    fs::create_dir_all(&run.out_dir).with_context(|| format!("creating {}", run.out_dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    let back = fs::read_to_string(path).with_context(|| format!("re-reading {}", path.display()))?;
    ensure!(back == text, "{} did not round-trip", path.display());
    Ok(())
}

fn load(scene: &SceneArgs, rec: &mut Recorder) -> Result<HsiScene> {
    rec.input(&scene.cube);
    rec.input(&scene.labels);
    let raw = load_scene(&scene.cube, &scene.labels)
        .with_context(|| format!("loading {} / {}", scene.cube.display(), scene.labels.display()))?;
    let mode = match scene.normalize {
        NormArg::Standardize => Normalization::Standardize,
        NormArg::Minmax => Normalization::MinMax,
        NormArg::None => return Ok(raw),
    };
    Ok(normalize(&raw, mode)?)
}

fn load_plan(path: &Path, scene: &HsiScene, rec: &mut Recorder) -> Result<SplitPlan> {
    rec.input(path);
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let plan = SplitPlan::from_csv(&text).with_context(|| format!("parsing {}", path.display()))?;
    plan.check_against(scene)
        .with_context(|| format!("{} does not match the scene", path.display()))?;
    Ok(plan)
}

fn finish(rec: Recorder, run: &RunArgs) -> Result<()> {
    let path = rec.finish(&run.out_dir)?;
    eprintln!("manifest {}", path.display());
    Ok(())
}

pub fn analyze(a: AnalyzeArgs) -> Result<()> {
    prepare(&a.run)?;
    let mut rec = Recorder::start("analyze", &a, None)?;
    if let Some(c) = &a.run.config {
        rec.input(c);
    }
    let graph = build_network(&NetworkConfig::new(a.patch, a.bands, a.classes))?;
    let report = analyze_network(&graph, [a.input_hw, a.input_hw, a.bands])?;
    let text = report.to_text();
    print!("{text}");
    let txt = a.run.out_dir.join("cost.txt");
    let csv = a.run.out_dir.join("cost.csv");
    write_text(&txt, &text)?;
    write_text(&csv, &report.to_csv())?;
    rec.output(&txt);
    rec.output(&csv);
    finish(rec, &a.run)
}

pub fn split(a: SplitArgs) -> Result<()> {
    prepare(&a.run)?;
    let mut rec = Recorder::start("split", &a, Some(a.seed))?;
    rec.input(&a.cube);
    rec.input(&a.labels);
    let scene = load_scene(&a.cube, &a.labels)?;
    let plan = stratified_split(&scene, a.train_ratio, a.val_ratio, a.min_per_class, a.seed)?;
    for w in &plan.warnings {
        eprintln!("warning: {w}");
    }
    let k = scene.num_classes;
    let counts = |s| plan.class_counts(s, k);
    let (tr, va, te) = (counts(Split::Train), counts(Split::Val), counts(Split::Test));
    println!("class,train,val,test");
    for c in 0..k {
        println!("{},{},{},{}", c + 1, tr[c], va[c], te[c]);
    }
    println!("total,{},{},{}", plan.train.len(), plan.val.len(), plan.test.len());

    let path = a.run.out_dir.join("split.csv");
    let csv = plan.to_csv();
    write_text(&path, &csv)?;
    let back = SplitPlan::from_csv(&csv)?;
    ensure!(back.train == plan.train && back.val == plan.val && back.test == plan.test, "split.csv did not round-trip");
    rec.output(&path);
    finish(rec, &a.run)
}

impl FitArgs {
    fn loss_config(&self) -> LossConfig {
        let mut l = match self.loss {
            LossArg::Cel => LossConfig::cel(),
            LossArg::Bcel => LossConfig::bcel(self.alpha.0.clone()),
            LossArg::Focal => LossConfig::focal(self.alpha.0.clone(), self.gamma),
        };
        l.alpha_mode = match self.alpha_mode {
            AlphaModeArg::Fixed => AlphaMode::Fixed,
            AlphaModeArg::Freq => AlphaMode::InverseFrequency,
        };
        l
    }

    fn train_config(&self) -> Result<TrainConfig> {
        let optimizer = match self.optimizer {
            OptimArg::Adam => OptimizerKind::default(),
            OptimArg::Sgd => OptimizerKind::sgd(self.momentum),
        };
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            optimizer,
            loss: self.loss_config(),
            seed: self.seed,
            patience: self.patience,
            deterministic: self.deterministic,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn train_typed<T: Real>(a: &TrainArgs, scene: &HsiScene, plan: &SplitPlan, rec: &mut Recorder) -> Result<()> {
    let graph = build_network(&NetworkConfig::new(a.fit.patch, scene.bands, scene.num_classes))?;
    let cfg = a.fit.train_config()?;
    let mut params = init_parameters::<T>(&graph, a.fit.seed);
    let result = trainer::train(&graph, &mut params, scene, plan, &cfg);

    // On divergence the store already holds the last finite parameters.
    let ckpt = a.run.out_dir.join("checkpoint.ldwn");
    save_checkpoint(BufWriter::new(File::create(&ckpt)?), &graph.config, &params)?;
    let (back_cfg, back) = load_checkpoint::<T, _>(BufReader::new(File::open(&ckpt)?))?;
    ensure!(back_cfg == graph.config, "checkpoint config did not round-trip");
    back.check_against(&graph)?;
    rec.output(&ckpt);

    let history = match result {
        Err(Error::Diverged { epoch }) => {
            bail!("training diverged in epoch {epoch}; last finite parameters saved to {}", ckpt.display())
        }
        r => r?,
    };
    for r in &history.epochs {
        match r.val_oa {
            Some(v) => eprintln!("epoch {:>4}  loss {:.6}  val OA {:.4}", r.epoch, r.train_loss, v),
            None => eprintln!("epoch {:>4}  loss {:.6}", r.epoch, r.train_loss),
        }
    }
    println!(
        "trained {} epochs on {} pixels, kept epoch {}, {} parameters",
        history.epochs.len(),
        plan.train.len(),
        history.selected_epoch,
        params.trainable_count()
    );
    let hist = a.run.out_dir.join("history.csv");
    write_text(&hist, &history.to_csv())?;
    rec.output(&hist);
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    prepare(&a.run)?;
    let mut rec = Recorder::start("train", &a, Some(a.fit.seed))?;
    let scene = load(&a.scene, &mut rec)?;
    let plan = load_plan(&a.fit.split_plan, &scene, &mut rec)?;
    let out = match a.fit.precision {
        Precision::F32 => train_typed::<f32>(&a, &scene, &plan, &mut rec),
        Precision::F64 => train_typed::<f64>(&a, &scene, &plan, &mut rec),
    };
    // A diverged run still gets a manifest for its checkpoint.
    finish(rec, &a.run)?;
    out
}

fn report_typed<T: Real>(a: &EvalArgs, scene: &HsiScene, plan: &SplitPlan) -> Result<EvalReport> {
    let (cfg, params) = load_checkpoint::<T, _>(BufReader::new(
        File::open(&a.checkpoint).with_context(|| format!("opening {}", a.checkpoint.display()))?,
    ))?;
    let graph = build_network(&cfg)?;
    params.check_against(&graph)?;
    ensure!(
        scene.bands == cfg.bands,
        "scene has {} bands, checkpoint was trained on {}",
        scene.bands,
        cfg.bands
    );
    let pixels = match a.split {
        EvalSplit::Test => plan.pixels(Split::Test),
        EvalSplit::Val => plan.pixels(Split::Val),
    };
    ensure!(!pixels.is_empty(), "the {:?} split is empty", a.split);
    Ok(evaluate(&graph, &params, scene, pixels, a.batch_size)?)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    prepare(&a.run)?;
    let mut rec = Recorder::start("eval", &a, None)?;
    rec.input(&a.checkpoint);
    let scene = load(&a.scene, &mut rec)?;
    let plan = load_plan(&a.split_plan, &scene, &mut rec)?;
    let report = match a.precision {
        Precision::F32 => report_typed::<f32>(&a, &scene, &plan)?,
        Precision::F64 => report_typed::<f64>(&a, &scene, &plan)?,
    };
    let text = report.to_text();
    print!("{text}");
    let txt = a.run.out_dir.join("eval.txt");
    let csv = a.run.out_dir.join("eval.csv");
    write_text(&txt, &text)?;
    write_text(&csv, &report.to_csv())?;
    rec.output(&txt);
    rec.output(&csv);
    finish(rec, &a.run)
}

fn map_typed<T: Real>(a: &MapArgs, scene: &HsiScene) -> Result<Vec<i32>> {
    let (cfg, params) = load_checkpoint::<T, _>(BufReader::new(
        File::open(&a.checkpoint).with_context(|| format!("opening {}", a.checkpoint.display()))?,
    ))?;
    let graph = build_network(&cfg)?;
    params.check_against(&graph)?;
    ensure!(
        scene.bands == cfg.bands,
        "scene has {} bands, checkpoint was trained on {}",
        scene.bands,
        cfg.bands
    );
    let coords: Vec<(usize, usize)> = (0..scene.h * scene.w)
        .filter(|&i| a.all_pixels || scene.labels[i] > 0)
        .map(|i| (i / scene.w, i % scene.w))
        .collect();
    let pred = predict_pixels(&graph, &params, scene, &coords, a.batch_size)?;
    let mut out = vec![0i32; scene.h * scene.w];
    for (&(r, c), p) in coords.iter().zip(pred) {
        out[r * scene.w + c] = p as i32 + 1;
    }
    Ok(out)
}

fn write_map(path: &Path, h: usize, w: usize, labels: &[i32]) -> Result<()> {
    let img = render_labels(h, w, labels)?;
    let mut f = BufWriter::new(File::create(path)?);
    write_ppm(&mut f, &img)?;
    f.flush()?;
    drop(f);
    let back = read_ppm(BufReader::new(File::open(path)?))?;
    ensure!(back == img, "{} did not round-trip", path.display());
    Ok(())
}

pub fn map(a: MapArgs) -> Result<()> {
    prepare(&a.run)?;
    let mut rec = Recorder::start("map", &a, None)?;
    rec.input(&a.checkpoint);
    let scene = load(&a.scene, &mut rec)?;
    let pred = match a.precision {
        Precision::F32 => map_typed::<f32>(&a, &scene)?,
        Precision::F64 => map_typed::<f64>(&a, &scene)?,
    };
    let labeled = (0..pred.len()).filter(|&i| scene.labels[i] > 0);
    let (hit, n) = labeled.fold((0usize, 0usize), |(h, n), i| (h + (pred[i] == scene.labels[i]) as usize, n + 1));
    if n > 0 {
        println!("{hit} of {n} labeled pixels agree with the ground truth ({:.2}%)", 100.0 * hit as f64 / n as f64);
    }
    let map_path = a.run.out_dir.join("map.ppm");
    let gt_path = a.run.out_dir.join("gt.ppm");
    write_map(&map_path, scene.h, scene.w, &pred)?;
    write_map(&gt_path, scene.h, scene.w, &scene.labels)?;
    rec.output(&map_path);
    rec.output(&gt_path);
    finish(rec, &a.run)
}

fn sweep_history_csv(rows: &[trainer::SweepRow]) -> String {
    let mut s = String::from("gamma,epoch,trainLoss,valOA\n");
    for r in rows {
        for e in &r.history.epochs {
            let val = e.val_oa.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{}\n", r.gamma, e.epoch, e.train_loss, val));
        }
    }
    s
}

pub fn gamma_sweep(a: SweepArgs) -> Result<()> {
    prepare(&a.run)?;
    let mut rec = Recorder::start("gamma-sweep", &a, Some(a.fit.seed))?;
    let scene = load(&a.scene, &mut rec)?;
    let plan = load_plan(&a.fit.split_plan, &scene, &mut rec)?;
    ensure!(a.gammas.0.iter().all(|g| g.is_finite() && *g >= 0.0), "γ values must be finite and >= 0");
    let graph = build_network(&NetworkConfig::new(a.fit.patch, scene.bands, scene.num_classes))?;
    let cfg = a.fit.train_config()?;
    let rows = match a.fit.precision {
        Precision::F32 => trainer::gamma_sweep::<f32>(&a.gammas.0, &cfg, &graph, &scene, &plan)?,
        Precision::F64 => trainer::gamma_sweep::<f64>(&a.gammas.0, &cfg, &graph, &scene, &plan)?,
    };
    println!("gamma      OA      AA   Kappa");
    for r in &rows {
        println!(
            "{:>5} {:>7.2} {:>7.2} {:>7.4}",
            r.gamma,
            100.0 * r.report.oa,
            100.0 * r.report.aa,
            r.report.kappa
        );
    }
    let csv = a.run.out_dir.join("gamma_sweep.csv");
    let hist = a.run.out_dir.join("gamma_sweep_history.csv");
    let text = sweep_csv(&rows);
    write_text(&csv, &text)?;
    ensure!(text.lines().count() == rows.len() + 1, "gamma_sweep.csv row count mismatch");
    write_text(&hist, &sweep_history_csv(&rows))?;
    rec.output(&csv);
    rec.output(&hist);
    finish(rec, &a.run)
}

pub fn synth(a: SynthArgs) -> Result<()> {
    prepare(&a.run)?;
    let mut rec = Recorder::start("synth", &a, Some(a.seed))?;
    let spec = match a.kind {
        SynthKind::Separable => SyntheticSpec::separable(a.bands, a.seed),
        SynthKind::Imbalanced => SyntheticSpec::imbalanced(a.bands, a.seed),
    };
    let scene = synthetic_scene(&spec)?;
    let cube: PathBuf = a.run.out_dir.join(format!("{}.hsc", a.name));
    let labels: PathBuf = a.run.out_dir.join(format!("{}.hsl", a.name));
    save_scene(&scene, &cube, &labels)?;
    let back = load_scene(&cube, &labels)?;
    ensure!(back.cube == scene.cube && back.labels == scene.labels, "synthetic scene did not round-trip");
    println!(
        "{}×{}×{} scene, {} classes, counts {:?}",
        scene.h,
        scene.w,
        scene.bands,
        scene.num_classes,
        scene.class_counts()
    );
    rec.output(&cube);
    rec.output(&labels);
    finish(rec, &a.run)
}
