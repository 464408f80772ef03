use std::collections::HashMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use pdls_core::calibration::ThresholdSet;
use pdls_core::data::{SpecimenBag, Split};
use pdls_core::eval::{
    ablation_datasets, ablation_run, class_scores, confusion_metrics, diagnosis_report, roc_auc_ovr,
    triage_simulation, AblationConfig, MetricMode, TriageCase,
};
use pdls_core::hierarchy::{self, HierarchyLog, Preprocessing};
use pdls_core::persist::{self, metrics_csv, predictions_csv, roc_csv, triage_csv};
use pdls_core::qc::{
    blur_filter, calibrate_blur_threshold, ink_filter, ink_train_config, process_slide, read_slide,
    segment_tissue, tile_slide, train_ink_detector, write_slide, Embedder, QcSettings, RefColorStats, SlideImage,
    Tile,
};
use pdls_core::rng::{derive, derive_str, rng_from};
use pdls_core::synth::{
    apply_consensus_filter, gen_dataset, gen_synthetic_slide, review_bags, split_counts, LabShift, PrototypeSet,
    SlideOptions, SynthParams,
};
use pdls_core::taxonomy::{SpecimenClass, DIAGNOSES};

use crate::context::Context;
use crate::Failure;

const SHIFTED_LAB: &str = "shifted";

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let data = |e: csv::Error| Failure::Data(e.to_string());
    w.write_record(header).map_err(data)?;
    for r in rows {
        w.write_record(&r).map_err(data)?;
    }
    w.into_inner().map_err(|e| Failure::Data(e.to_string()))
}

fn prototypes(ctx: &Context, params: &SynthParams) -> Result<PrototypeSet, Failure> {
    Ok(PrototypeSet::from_params(params, derive(ctx.seed(), 0x5052))?)
}

pub fn synth_gen(ctx: &Context) -> Result<(), Failure> {
    let cfg = &ctx.config;
    let params = cfg.synth_params();
    let protos = prototypes(ctx, &params)?;
    let mut bags = gen_dataset(&[params.per_class; 6], &protos, &params, derive(ctx.seed(), 0x4453))?;
    if cfg.synth.consensus {
        let reviewed = review_bags(bags, &cfg.kernel()?, derive(ctx.seed(), 0x5256))?;
        let sets = apply_consensus_filter(reviewed)?;
        info!(
            "consensus kept {:.1}% of melanocytic specimens",
            100.0 * sets.melanocytic_retention()
        );
        bags = sets.consensus;
    }
    persist::save_dataset(&bags, &ctx.output("manifest.csv"), &ctx.output("embeddings.bin"))?;
    info!("wrote {} specimens to {}", bags.len(), ctx.out.display());

    if cfg.synth.shifted_per_class > 0 {
        let shifted_params = SynthParams {
            per_class: cfg.synth.shifted_per_class,
            lab_id: SHIFTED_LAB.into(),
            ..params.clone()
        };
        let shift = LabShift::new(params.dim, cfg.synth.shift_mix, cfg.synth.shift_offset, derive(ctx.seed(), 0x4c53));
        let shifted = gen_dataset(
            &[shifted_params.per_class; 6],
            &protos,
            &shifted_params,
            derive(ctx.seed(), 0x4c44),
        )?
        .iter()
        .map(|b| shift.apply_bag(b))
        .collect::<pdls_core::Result<Vec<_>>>()?;
        persist::save_dataset(
            &shifted,
            &ctx.output("calibration_manifest.csv"),
            &ctx.output("calibration_embeddings.bin"),
        )?;
        info!("wrote {} shifted-lab specimens", shifted.len());
    }

    if cfg.synth.slides_per_class > 0 {
        write_synthetic_slides(ctx, &params)?;
    }
    Ok(())
}

/// One row of a slide list: a slide image and the specimen it belongs to.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SlideRow {
    specimen_id: String,
    lab_id: String,
    class: String,
    diagnosis: String,
    split: String,
    /// Relative to the slide list's directory.
    path: PathBuf,
}

fn write_synthetic_slides(ctx: &Context, params: &SynthParams) -> Result<(), Failure> {
    let s = &ctx.config.synth;
    let dir = ctx.output("slides");
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Data(format!("cannot create {}: {e}", dir.display())))?;
    let mut rows = Vec::new();
    for class in SpecimenClass::ALL {
        let [train, val, _] = split_counts(s.slides_per_class, &params.split);
        let diagnosis = DIAGNOSES.iter().find(|d| d.1 == class && d.2 > 0).map_or("", |d| d.0);
        for i in 0..s.slides_per_class {
            let id = format!("{}-slide-{}-{i:04}", params.lab_id, class.code());
            let mut rng = rng_from(derive_str(ctx.seed(), &id));
            let opts = SlideOptions {
                ink: rng.random_bool(s.ink_fraction),
                blur: rng.random_bool(s.blur_fraction),
                width: s.slide_size,
                height: s.slide_size,
                ..SlideOptions::default()
            };
            let slide = gen_synthetic_slide(class, &opts, &mut rng)?;
            let file = PathBuf::from("slides").join(format!("{id}.png"));
            write_slide(&ctx.out.join(&file), &slide.slide)?;
            let split = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            rows.push(SlideRow {
                specimen_id: id,
                lab_id: params.lab_id.clone(),
                class: class.code().into(),
                diagnosis: diagnosis.into(),
                split: split.code().into(),
                path: file,
            });
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(|e| Failure::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Data(e.to_string()))?;
    persist::atomic_write(&ctx.output("slides.csv"), &bytes)?;
    info!("wrote {} synthetic slides", rows.len());
    Ok(())
}

fn read_slide_list(path: &Path) -> Result<Vec<SlideRow>, Failure> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rows = Vec::new();
    for r in reader.deserialize() {
        let mut row: SlideRow = r.map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        if row.path.is_relative() {
            row.path = base.join(&row.path);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn fit_ink_detector(ctx: &Context) -> Result<pdls_core::mil::BagModel, Failure> {
    let cfg = &ctx.config;
    let n = cfg.qc.ink_training_slides.max(2);
    let mut slides: Vec<(SlideImage, bool)> = Vec::with_capacity(2 * n);
    for i in 0..2 * n {
        let ink = i % 2 == 0;
        let class = SpecimenClass::ALL[(i / 2) % 6];
        let opts = SlideOptions {
            ink,
            width: cfg.synth.slide_size,
            height: cfg.synth.slide_size,
            ..SlideOptions::default()
        };
        let s = gen_synthetic_slide(class, &opts, &mut rng_from(derive(ctx.seed(), 0x494e_0000 + i as u64)))?;
        slides.push((s.slide, ink));
    }
    let cut = (slides.len() * 4 / 5).max(2);
    let refs: Vec<(&SlideImage, bool)> = slides.iter().map(|(s, k)| (s, *k)).collect();
    let (train, val) = refs.split_at(cut);
    info!("training ink detector on {} synthetic slides", train.len());
    Ok(train_ink_detector(train, val, &ink_train_config(derive(ctx.seed(), 0x494e)))?)
}

fn fit_preprocessing(ctx: &Context, slides: &[SlideImage]) -> Result<Preprocessing, Failure> {
    let q = &ctx.config.qc;
    let ink_detector = if q.ink_detector { Some(fit_ink_detector(ctx)?) } else { None };
    let mut per_slide: Vec<Vec<Tile>> = Vec::with_capacity(slides.len());
    for s in slides {
        let tiles = tile_slide(s, &segment_tissue(s));
        per_slide.push(match &ink_detector {
            Some(m) => ink_filter(tiles, m, q.ink_cutoff)?.0,
            None => tiles,
        });
    }
    let all: Vec<Tile> = per_slide.iter().flatten().cloned().collect();
    if all.is_empty() {
        return Err(Failure::Data("no tissue tiles found in any slide".into()));
    }
    let blur_threshold = match q.blur_threshold {
        Some(t) => t,
        None => calibrate_blur_threshold(&all)?,
    };
    let reference_color = if q.color_adaptation {
        let mut kept = Vec::new();
        for tiles in per_slide {
            kept.extend(blur_filter(tiles, blur_threshold)?.0);
        }
        Some(RefColorStats::from_tiles(&kept)?)
    } else {
        None
    };
    Ok(Preprocessing {
        reference_color,
        ink_detector,
        blur_threshold: Some(blur_threshold),
    })
}

pub fn qc(ctx: &Context, reuse: bool) -> Result<(), Failure> {
    let cfg = &ctx.config;
    let list = read_slide_list(&ctx.input(&cfg.data.slides, "slides.csv"))?;
    let slides = list.iter().map(|r| read_slide(&r.path)).collect::<pdls_core::Result<Vec<_>>>()?;
    let pre_path = ctx.input(&cfg.data.preprocessing, "preprocessing.pdls");
    let pre = if reuse {
        persist::load_preprocessing(&pre_path)?
    } else {
        let p = fit_preprocessing(ctx, &slides)?;
        persist::save_preprocessing(&p, &ctx.output("preprocessing.pdls"))?;
        p
    };
    let settings = QcSettings {
        ink_detector: pre.ink_detector.as_ref(),
        ink_cutoff: Some(cfg.qc.ink_cutoff),
        blur_threshold: pre.blur_threshold,
        reference_color: pre.reference_color.as_ref(),
    };

    let mut grouped: Vec<(SlideRow, Vec<Tile>)> = Vec::new();
    let mut report = Vec::new();
    for (row, slide) in list.iter().zip(&slides) {
        let out = process_slide(slide, &settings)?;
        let count = |reason: &str| out.rejected.iter().filter(|r| r.reason == reason).count();
        report.push(vec![
            row.specimen_id.clone(),
            row.path.display().to_string(),
            out.candidates.to_string(),
            out.tiles.len().to_string(),
            count("ink").to_string(),
            count("blur").to_string(),
        ]);
        match grouped.iter_mut().find(|(r, _)| r.specimen_id == row.specimen_id) {
            Some((_, tiles)) => tiles.extend(out.tiles),
            None => grouped.push((row.clone(), out.tiles)),
        }
    }
    let body = csv_bytes(
        &["specimen_id", "slide", "candidate_tiles", "kept_tiles", "ink_rejected", "blur_rejected"],
        report,
    )?;
    ctx.write_csv("qc_report.csv", &[], &body)?;

    let embedder = Embedder::builtin_with(cfg.qc.embed_dim, derive(ctx.seed(), 0x454d));
    let mut bags = Vec::new();
    for (row, tiles) in grouped {
        if tiles.is_empty() {
            warn!("{}: no tiles survived quality control; skipped", row.specimen_id);
            continue;
        }
        bags.push(SpecimenBag {
            tiles: embedder.embed(&row.specimen_id, &tiles)?,
            label: SpecimenClass::from_code(&row.class)?,
            split: row.split.parse()?,
            specimen_id: row.specimen_id,
            lab_id: row.lab_id,
            diagnosis: row.diagnosis,
            diagnostic_tiles: Vec::new(),
        });
    }
    persist::save_dataset(&bags, &ctx.output("manifest.csv"), &ctx.output("embeddings.bin"))?;
    info!("embedded {} specimens at width {}", bags.len(), embedder.dim());
    Ok(())
}

fn write_log(ctx: &Context, name: &str, log: &HierarchyLog) -> Result<(), Failure> {
    let mut rows = Vec::new();
    for (model, l) in [("upstream", &log.upstream), ("suspect", &log.suspect), ("rest", &log.rest)] {
        rows.push(vec![model.into(), "0".into(), String::new(), l.initial_val_loss.to_string()]);
        for e in &l.epochs {
            rows.push(vec![
                model.into(),
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_loss.to_string(),
            ]);
        }
    }
    let comments: Vec<String> = [("upstream", &log.upstream), ("suspect", &log.suspect), ("rest", &log.rest)]
        .iter()
        .map(|(m, l)| format!("{m} best_epoch={} early_stop={}", l.best_epoch, l.stopped_early))
        .collect();
    let body = csv_bytes(&["model", "epoch", "train_loss", "val_loss"], rows)?;
    ctx.write_csv(name, &comments, &body)?;
    Ok(())
}

pub fn train(ctx: &Context) -> Result<(), Failure> {
    let cfg = &ctx.config;
    let bags = ctx.load_dataset()?;
    let dim = bags.first().map_or(cfg.synth.dim, |b| b.dim());
    let (mut model, log) = hierarchy::train_hierarchy(&bags, &cfg.hierarchy_config(dim)?, &cfg.mc_config())?;
    let pre_path = ctx.input(&cfg.data.preprocessing, "preprocessing.pdls");
    if pre_path.exists() {
        model.preprocessing = persist::load_preprocessing(&pre_path)?;
        info!("attached preprocessing from {}", pre_path.display());
    }
    persist::save_model(&model, &ctx.output("model.pdls"))?;
    write_log(ctx, "training_log.csv", &log)
}

fn write_thresholds(ctx: &Context, t: &ThresholdSet) -> Result<(), Failure> {
    let mut rows: Vec<Vec<String>> = SpecimenClass::ALL
        .iter()
        .map(|c| {
            let th = t.accuracy_for(*c);
            vec![
                c.code().into(),
                "accuracy".into(),
                t.targets.accuracy[c.index()].to_string(),
                th.value.to_string(),
                th.attainable.to_string(),
            ]
        })
        .collect();
    rows.push(vec![
        SpecimenClass::MelanocyticHighRisk.code().into(),
        "ppv".into(),
        t.targets.ppv_high.to_string(),
        t.ppv_high.value.to_string(),
        t.ppv_high.attainable.to_string(),
    ]);
    let body = csv_bytes(&["class", "kind", "target", "threshold", "attainable"], rows)?;
    ctx.write_csv("thresholds.csv", &[], &body)?;
    Ok(())
}

pub fn calibrate(ctx: &Context) -> Result<(), Failure> {
    let model = ctx.load_model()?;
    let bags = ctx.load_dataset()?;
    let val: Vec<&SpecimenBag> = bags.iter().filter(|b| b.split == Split::Val).collect();
    let model = hierarchy::calibrate(&model, &val, &ctx.config.targets())?;
    persist::save_model(&model, &ctx.output("model.pdls"))?;
    write_thresholds(ctx, model.thresholds.as_ref().expect("just calibrated"))
}

pub fn finetune(ctx: &Context, model_out: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = &ctx.config;
    let model = ctx.load_model()?;
    let bags = persist::load_dataset(
        &ctx.input(&cfg.data.calibration_manifest, "calibration_manifest.csv"),
        &ctx.input(&cfg.data.calibration_embeddings, "calibration_embeddings.bin"),
    )?;
    let pool: Vec<SpecimenBag> = bags.into_iter().filter(|b| b.split != Split::Test).collect();
    let (tuned, log) = hierarchy::finetune(&model, &pool, &cfg.finetune_config())?;
    let path = model_out.unwrap_or_else(|| ctx.output("finetuned.pdls"));
    persist::save_model(&tuned, &path)?;
    info!("wrote {}", path.display());
    write_log(ctx, "finetune_log.csv", &log)
}

fn predict(ctx: &Context, bags: &[&SpecimenBag]) -> Result<Vec<hierarchy::Prediction>, Failure> {
    let model = ctx.load_model()?;
    info!("predicting {} specimens", bags.len());
    Ok(hierarchy::infer_all(&model, bags)?)
}

pub fn infer(ctx: &Context, split: &str) -> Result<(), Failure> {
    let wanted = match split {
        "all" => None,
        s => Some(s.parse::<Split>().map_err(|e| Failure::Usage(e.to_string()))?),
    };
    let bags = ctx.load_dataset()?;
    let chosen: Vec<&SpecimenBag> = bags.iter().filter(|b| wanted.is_none_or(|s| b.split == s)).collect();
    let preds = predict(ctx, &chosen)?;
    ctx.write_csv("predictions.csv", &[], &predictions_csv(&preds)?)?;
    Ok(())
}

pub fn evaluate(ctx: &Context) -> Result<(), Failure> {
    let bags = ctx.load_dataset()?;
    let test: Vec<&SpecimenBag> = bags.iter().filter(|b| b.split == Split::Test).collect();
    if test.is_empty() {
        return Err(Failure::Data("dataset has no test split".into()));
    }
    let preds = predict(ctx, &test)?;
    ctx.write_csv("predictions.csv", &[], &predictions_csv(&preds)?)?;

    let truths: Vec<SpecimenClass> = test.iter().map(|b| b.label).collect();
    let labels: Vec<_> = preds.iter().map(|p| p.final_label).collect();
    let mut rows = Vec::new();
    for mode in [MetricMode::Strict, MetricMode::SuspectCredit] {
        for r in confusion_metrics(&labels, &truths, mode)? {
            rows.push((mode, r));
        }
    }
    for (mode, r) in &rows {
        println!(
            "{:<14} {:<14} ppv {:.3} sensitivity {:.3} support {}",
            mode.code(),
            r.label,
            r.ppv,
            r.sensitivity,
            r.support
        );
    }
    ctx.write_csv("metrics.csv", &[], &metrics_csv(&rows)?)?;

    let diagnoses: Vec<&str> = test.iter().map(|b| b.diagnosis.as_str()).collect();
    let per_diagnosis: Vec<_> = diagnosis_report(&labels, &diagnoses)?
        .into_iter()
        .map(|r| (MetricMode::SuspectCredit, r))
        .collect();
    ctx.write_csv("diagnosis_metrics.csv", &[], &metrics_csv(&per_diagnosis)?)?;

    let scores: Vec<[f64; 6]> = preds.iter().map(|p| class_scores(&p.confidences)).collect();
    let mut curves = Vec::new();
    for (class, curve) in roc_auc_ovr(&scores, &truths)? {
        match curve {
            Ok(c) => {
                println!("auc {:<14} {:.4}", class.code(), c.auc);
                curves.push((class, c));
            }
            Err(e) => warn!("{e}"),
        }
    }
    ctx.write_csv("roc.csv", &[], &roc_csv(&curves)?)?;
    Ok(())
}

pub fn triage_sim(ctx: &Context, sims: Option<usize>, predictions: Option<PathBuf>) -> Result<(), Failure> {
    let path = predictions.unwrap_or_else(|| ctx.output("predictions.csv"));
    let truths: HashMap<String, SpecimenClass> = persist::read_manifest(&ctx.manifest_path())?
        .into_iter()
        .map(|r| SpecimenClass::from_code(&r.class).map(|c| (r.specimen_id, c)))
        .collect::<pdls_core::Result<_>>()?;
    let bad = |e: csv::Error| Failure::Data(format!("{}: {e}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(&path)
        .map_err(bad)?;
    let headers = reader.headers().map_err(bad)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Failure::Data(format!("{}: no {name} column", path.display())))
    };
    let (id_col, s_col) = (col("specimen_id")?, col("p_suspect")?);
    let mut pool = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(bad)?;
        let id = &rec[id_col];
        let truth = *truths
            .get(id)
            .ok_or_else(|| Failure::Data(format!("specimen {id} is not in the manifest")))?;
        let suspect_confidence = rec[s_col]
            .parse()
            .map_err(|_| Failure::Data(format!("specimen {id}: bad p_suspect {:?}", &rec[s_col])))?;
        pool.push(TriageCase {
            specimen_id: id.to_string(),
            suspect_confidence,
            truth,
        });
    }
    let mut tc = ctx.config.triage_config();
    if let Some(s) = sims {
        if s == 0 {
            return Err(Failure::Usage("--sims must be positive".into()));
        }
        tc.simulations = s;
    }
    let curve = triage_simulation(&pool, &tc)?;
    for f in [0.3, 0.5] {
        println!("mean suspect sensitivity at {:.0}% reviewed: {:.4}", 100.0 * f, curve.mean_at(f));
    }
    let comments = vec![
        format!("S={}", curve.simulations),
        format!("caseload={}", tc.caseload.unwrap_or(pool.len())),
    ];
    ctx.write_csv("triage_curve.csv", &comments, &triage_csv(&curve)?)?;
    Ok(())
}

pub fn ablation(ctx: &Context) -> Result<(), Failure> {
    let cfg = &ctx.config;
    let params = cfg.synth_params();
    let protos = prototypes(ctx, &params)?;
    let bags = gen_dataset(&[params.per_class; 6], &protos, &params, derive(ctx.seed(), 0x4453))?;
    let sets = apply_consensus_filter(review_bags(bags, &cfg.kernel()?, derive(ctx.seed(), 0x5256))?)?;
    let (consensus, non_consensus, test) = ablation_datasets(&sets);
    let mut hc = cfg.hierarchy_config(params.dim)?;
    if let Some(e) = cfg.ablation.max_epochs {
        hc.train.max_epochs = e;
    }
    if let Some(lr) = cfg.ablation.learning_rate {
        hc.train.adam.learning_rate = lr;
    }
    let mut mc = cfg.mc_config();
    if let Some(t) = cfg.ablation.mc_passes {
        mc.passes = t;
    }
    let ac = AblationConfig {
        hierarchy: hc,
        mc,
        targets: cfg.targets(),
        seeds: cfg.ablation.seeds.clone(),
    };
    let report = ablation_run(&consensus, &non_consensus, &test, &ac)?;

    let mut header = vec!["seed".to_string(), "variant".into()];
    header.extend(SpecimenClass::ALL.iter().map(|c| format!("sensitivity_{}", c.code())));
    header.extend(["suspect_sensitivity".into(), "high_ppv".into()]);
    let mut rows = Vec::new();
    for run in &report.runs {
        for (variant, m) in [("consensus", &run.consensus), ("non_consensus", &run.non_consensus)] {
            let mut r = vec![run.seed.to_string(), variant.to_string()];
            r.extend(m.sensitivity.iter().map(f64::to_string));
            r.extend([m.suspect_sensitivity.to_string(), m.high_ppv.to_string()]);
            rows.push(r);
        }
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let comments = vec![format!("melanocytic_retention={}", sets.melanocytic_retention())];
    ctx.write_csv("ablation_runs.csv", &comments, &csv_bytes(&header_refs, rows)?)?;

    let mut summary = Vec::new();
    for c in SpecimenClass::ALL {
        let d = report.sensitivity_delta[c.index()];
        summary.push(vec![format!("sensitivity_{}", c.code()), d.mean.to_string(), d.std.to_string()]);
    }
    for (name, d) in [
        ("suspect_sensitivity", report.suspect_sensitivity_delta),
        ("high_ppv", report.high_ppv_delta),
    ] {
        println!("{name} delta (consensus - non_consensus): {:+.4} ± {:.4}", d.mean, d.std);
        summary.push(vec![name.into(), d.mean.to_string(), d.std.to_string()]);
    }
    ctx.write_csv("ablation_summary.csv", &[], &csv_bytes(&["metric", "mean_delta", "std_delta"], summary)?)?;
    Ok(())
}
