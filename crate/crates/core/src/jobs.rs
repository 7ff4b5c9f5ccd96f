//! Batch jobs behind the command-line subcommands.
//!
//! Each job takes a resolved [`PipelineConfig`], writes its outputs
//! atomically and echoes the config into the output directory.

use crate::augment::compose_sj;
use crate::config::{PipelineConfig, RESOLVED_CONFIG_NAME};
use crate::distortion::apply_corruption;
use crate::error::{Error, Result};
use crate::eval::{correctness_flags, ConfusionMatrix};
use crate::io::{label_path_for, list_scans, read_bytes, read_scene, write_atomic, write_labels, write_scan};
use crate::lpd::{run_training_pipeline, write_episode_log, AgentMeta, QAgent};
use crate::nn::DenseNet;
use crate::ply::export_ply;
use crate::pointcloud::{generate_scene, normalize_intensity, LabelArray, PointCloud};
use crate::surrogate::{predict_classes, train_surrogate, SurrogateMeta, SurrogateModel};
use rayon::prelude::*;
use serde::Serialize;
use std::path::{Path, PathBuf};

pub const SURROGATE_CKPT: &str = "surrogate.ckpt";
pub const SURROGATE_META: &str = "surrogate.json";
pub const AGENT_CKPT: &str = "agent.ckpt";
pub const AGENT_META: &str = "agent.json";
pub const LOSS_LOG: &str = "losses.csv";
pub const EPISODE_LOG: &str = "episodes.csv";
pub const METRICS: &str = "metrics.csv";
pub const MANIFEST: &str = "manifest.json";

pub const CLASS_NAMES: [&str; 5] = ["ground", "wall", "pole", "vehicle", "clutter"];

/// Per-scan record written to `manifest.json` by the batch transforms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRecord {
    pub scan: String,
    pub points_in: usize,
    pub points_out: usize,
    /// Divisor applied to raw intensities on load.
    pub intensity_scale: Option<f64>,
}

pub fn echo_config(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    write_atomic(&dir.join(RESOLVED_CONFIG_NAME), cfg.to_toml().as_bytes())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read_bytes(path)?).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Writes `count` synthetic scenes as `000000.bin` / `000000.label`, ….
pub fn gen_scenes(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let paths: Vec<PathBuf> = (0..cfg.scenes.count).map(|i| out.join(format!("{i:06}.bin"))).collect();
    paths.par_iter().enumerate().try_for_each(|(i, p)| {
        let (cloud, labels) = generate_scene(&cfg.scene_spec(i))?;
        write_scan(p, &cloud)?;
        write_labels(&label_path_for(p), &labels)
    })?;
    echo_config(cfg, out)?;
    Ok(paths)
}

struct Loaded {
    path: PathBuf,
    cloud: PointCloud,
    labels: Option<LabelArray>,
    scale: Option<f64>,
}

fn load_all(cfg: &PipelineConfig, input: &Path) -> Result<Vec<Loaded>> {
    let scans = list_scans(input)?;
    if scans.is_empty() {
        return Err(Error::EmptyInput("no .bin scans found"));
    }
    scans
        .into_par_iter()
        .map(|path| {
            let (mut cloud, labels) = read_scene(&path, cfg.ignore_label)?;
            let scale = normalize_intensity(&mut cloud);
            Ok(Loaded {
                path,
                cloud,
                labels,
                scale,
            })
        })
        .collect()
}

fn labeled(cfg: &PipelineConfig, input: &Path) -> Result<Vec<(PointCloud, LabelArray)>> {
    load_all(cfg, input)?
        .into_iter()
        .map(|l| {
            let labels = l
                .labels
                .ok_or(Error::EmptyInput("training and evaluation need a .label file per scan"))?;
            labels.validate(cfg.num_classes)?;
            Ok((l.cloud, labels))
        })
        .collect()
}

/// Where a transformed scan goes: straight to `out` when it names a `.bin`
/// file and the input is a single scan, otherwise `out/<sub>/<name>`.
fn target(out: &Path, sub: Option<&str>, single: bool, src: &Path) -> PathBuf {
    if single && out.extension().is_some_and(|e| e == "bin") {
        return out.to_path_buf();
    }
    match sub {
        Some(s) => out.join(s).join(file_name(src)),
        None => out.join(file_name(src)),
    }
}

fn meta_dir(out: &Path) -> PathBuf {
    if out.extension().is_some_and(|e| e == "bin") {
        out.parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    } else {
        out.to_path_buf()
    }
}

/// Applies every configured corruption to every scan. With several
/// corruptions, each gets its own `<kind>_<severity>` subdirectory.
pub fn corrupt(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<Vec<ScanRecord>> {
    if cfg.corruptions.is_empty() {
        return Err(Error::InvalidSpec("no corruption configured".into()));
    }
    let single = input.is_file();
    let scans = load_all(cfg, input)?;
    let mut jobs = Vec::new();
    for j in 0..cfg.corruptions.len() {
        for i in 0..scans.len() {
            jobs.push((j, i));
        }
    }
    let records = jobs
        .par_iter()
        .map(|&(j, i)| {
            let spec = cfg.corruptions[j].with_seed(cfg.corruption_seed(j, i));
            let s = &scans[i];
            let labels = s
                .labels
                .clone()
                .unwrap_or_else(|| LabelArray::new(vec![cfg.ignore_label; s.cloud.len()], cfg.ignore_label));
            let (cloud, new_labels) = apply_corruption(&s.cloud, &labels, &spec)?;
            let sub = (cfg.corruptions.len() > 1).then(|| format!("{}_{}", spec.kind, spec.severity));
            let dst = target(out, sub.as_deref(), single, &s.path);
            write_scan(&dst, &cloud)?;
            if s.labels.is_some() {
                write_labels(&label_path_for(&dst), &new_labels)?;
            }
            Ok(ScanRecord {
                scan: dst.strip_prefix(meta_dir(out)).unwrap_or(&dst).display().to_string(),
                points_in: s.cloud.len(),
                points_out: cloud.len(),
                intensity_scale: s.scale,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dir = meta_dir(out);
    write_json(&dir.join(MANIFEST), &records)?;
    echo_config(cfg, &dir)?;
    Ok(records)
}

/// Selective jitter with a per-scan derived seed; labels are copied.
pub fn augment(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<Vec<ScanRecord>> {
    cfg.augment.validate()?;
    let single = input.is_file();
    let scans = load_all(cfg, input)?;
    let records = scans
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let cloud = compose_sj(&s.cloud, &cfg.augment.with_seed(cfg.augment_seed(i)));
            let dst = target(out, None, single, &s.path);
            write_scan(&dst, &cloud)?;
            if let Some(l) = &s.labels {
                write_labels(&label_path_for(&dst), l)?;
            }
            Ok(ScanRecord {
                scan: file_name(&dst),
                points_in: s.cloud.len(),
                points_out: cloud.len(),
                intensity_scale: s.scale,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dir = meta_dir(out);
    write_json(&dir.join(MANIFEST), &records)?;
    echo_config(cfg, &dir)?;
    Ok(records)
}

fn write_losses(path: &Path, losses: &[f64]) -> Result<()> {
    let mut text = String::from("epoch,loss\n");
    for (e, l) in losses.iter().enumerate() {
        text.push_str(&format!("{e},{l:?}\n"));
    }
    write_atomic(path, text.as_bytes())
}

pub fn save_surrogate(model: &SurrogateModel, dir: &Path) -> Result<()> {
    write_atomic(&dir.join(SURROGATE_CKPT), &model.net.to_checkpoint())?;
    write_json(&dir.join(SURROGATE_META), &model.meta())
}

pub fn load_surrogate(dir: &Path) -> Result<SurrogateModel> {
    let net = DenseNet::from_checkpoint(&read_bytes(&dir.join(SURROGATE_CKPT))?)?;
    let meta: SurrogateMeta = read_json(&dir.join(SURROGATE_META))?;
    SurrogateModel::from_parts(net, &meta)
}

pub fn save_agent(agent: &QAgent, dir: &Path) -> Result<()> {
    write_atomic(&dir.join(AGENT_CKPT), &agent.online.to_checkpoint())?;
    write_json(&dir.join(AGENT_META), &agent.meta())
}

pub fn load_agent(dir: &Path) -> Result<QAgent> {
    let net = DenseNet::from_checkpoint(&read_bytes(&dir.join(AGENT_CKPT))?)?;
    let meta: AgentMeta = read_json(&dir.join(AGENT_META))?;
    QAgent::from_parts(net, meta)
}

/// Trains the surrogate on clean labeled scans.
pub fn train_surrogate_job(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<SurrogateModel> {
    let scenes = labeled(cfg, input)?;
    let outcome = train_surrogate(&scenes, &cfg.train)?;
    save_surrogate(&outcome.model, out)?;
    write_losses(&out.join(LOSS_LOG), &outcome.epoch_losses)?;
    echo_config(cfg, out)?;
    Ok(outcome.model)
}

/// Joint surrogate and drop-agent training.
pub fn train_lpd_job(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<(SurrogateModel, QAgent)> {
    let scenes = labeled(cfg, input)?;
    let lpd = cfg.lpd_config();
    let surrogate = SurrogateModel::init(&lpd.train)?;
    let agent = QAgent::new(lpd.space.clone(), lpd.agent.clone())?;
    let outcome = run_training_pipeline(&scenes, surrogate, agent, &lpd)?;
    save_surrogate(&outcome.surrogate, out)?;
    save_agent(&outcome.agent, out)?;
    let mut log = Vec::new();
    write_episode_log(&outcome.log, &mut log).map_err(|e| Error::io(out.join(EPISODE_LOG), e))?;
    write_atomic(&out.join(EPISODE_LOG), &log)?;
    write_losses(&out.join(LOSS_LOG), &outcome.epoch_losses)?;
    echo_config(cfg, out)?;
    Ok((outcome.surrogate, outcome.agent))
}

fn class_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|c| {
            CLASS_NAMES
                .get(c)
                .map_or_else(|| format!("class_{c}"), |s| s.to_string())
        })
        .collect()
}

/// Scores a saved surrogate on labeled scans; per-scan matrices are merged.
pub fn eval_job(cfg: &PipelineConfig, model_dir: &Path, input: &Path, out: &Path) -> Result<ConfusionMatrix> {
    let model = load_surrogate(model_dir)?;
    let scenes = labeled(cfg, input)?;
    let cm = evaluate(&model, &scenes)?;
    let mut report = Vec::new();
    cm.write_report(&class_names(model.num_classes), &mut report)?;
    write_atomic(&out.join(METRICS), &report)?;
    echo_config(cfg, out)?;
    Ok(cm)
}

/// Confusion matrix of `model` over labeled scenes.
pub fn evaluate(model: &SurrogateModel, scenes: &[(PointCloud, LabelArray)]) -> Result<ConfusionMatrix> {
    let parts = scenes
        .par_iter()
        .map(|(cloud, labels)| {
            let mut cm = ConfusionMatrix::new(model.num_classes);
            cm.accumulate(&predict_classes(model, cloud), labels)?;
            Ok(cm)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = ConfusionMatrix::new(model.num_classes);
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}

/// Colors each point of one labeled scan by prediction correctness.
pub fn export_ply_job(cfg: &PipelineConfig, model_dir: &Path, scan: &Path, out: &Path) -> Result<()> {
    let model = load_surrogate(model_dir)?;
    let (mut cloud, labels) = read_scene(scan, cfg.ignore_label)?;
    normalize_intensity(&mut cloud);
    let labels = labels.ok_or(Error::EmptyInput("export needs the scan's .label file"))?;
    let flags = correctness_flags(&predict_classes(&model, &cloud), &labels);
    write_atomic(out, &export_ply(&cloud, &flags))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stats {
    pub scans: usize,
    pub points: usize,
    pub labeled_points: usize,
    pub ignored_points: usize,
    pub class_counts: Vec<usize>,
    pub intensity_min: Option<f64>,
    pub intensity_max: Option<f64>,
    pub max_range: Option<f64>,
}

pub fn stats(cfg: &PipelineConfig, input: &Path) -> Result<Stats> {
    let scans = load_all(cfg, input)?;
    let mut st = Stats {
        scans: scans.len(),
        points: 0,
        labeled_points: 0,
        ignored_points: 0,
        class_counts: vec![0; cfg.num_classes],
        intensity_min: None,
        intensity_max: None,
        max_range: None,
    };
    let fold = |acc: Option<f64>, v: f64, f: fn(f64, f64) -> f64| Some(acc.map_or(v, |a| f(a, v)));
    for s in &scans {
        st.points += s.cloud.len();
        for (i, &v) in s.cloud.intensity().iter().enumerate() {
            st.intensity_min = fold(st.intensity_min, v, f64::min);
            st.intensity_max = fold(st.intensity_max, v, f64::max);
            st.max_range = fold(st.max_range, s.cloud.range(i), f64::max);
        }
        if let Some(l) = &s.labels {
            l.validate(cfg.num_classes)?;
            st.labeled_points += l.len();
            for (c, n) in l.histogram(cfg.num_classes).into_iter().enumerate() {
                st.class_counts[c] += n;
            }
            st.ignored_points += (0..l.len()).filter(|&i| l.is_ignored(i)).count();
        }
    }
    Ok(st)
}

pub fn stats_json(st: &Stats) -> String {
    serde_json::to_string_pretty(st).expect("stats serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distortion::{CorruptionKind, CorruptionSpec, DropMode};
    use crate::io::{read_labels, read_scan};

    fn small_cfg(seed: u64) -> PipelineConfig {
        let mut cfg = PipelineConfig {
            seed,
            ..Default::default()
        };
        cfg.scenes.count = 3;
        cfg.scenes.spec.ground_points = 300;
        cfg.train.epochs = 2;
        cfg.resolve().unwrap()
    }

    #[test]
    fn gen_then_corrupt_exact_counts() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg(1);
        let mut spec = CorruptionSpec::new(CorruptionKind::PointDrop, 0.9, 0);
        spec.mode = DropMode::Exact;
        cfg.corruptions = vec![spec];
        let cfg = cfg.resolve().unwrap();
        let scenes = dir.path().join("scenes");
        let paths = gen_scenes(&cfg, &scenes).unwrap();
        let out = dir.path().join("d1");
        let recs = corrupt(&cfg, &scenes, &out).unwrap();
        assert_eq!(recs.len(), paths.len());
        for (r, p) in recs.iter().zip(&paths) {
            let c = read_scan(&out.join(file_name(p))).unwrap();
            assert_eq!(c.len(), r.points_out);
            assert_eq!(r.points_out, r.points_in - (r.points_in as f64 * 0.9).round() as usize);
            let l = read_labels(&label_path_for(&out.join(file_name(p))), 255).unwrap();
            assert_eq!(l.len(), c.len());
        }
        assert!(out.join(RESOLVED_CONFIG_NAME).exists());
        assert!(out.join(MANIFEST).exists());
    }

    #[test]
    fn train_eval_export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg(2);
        let scenes = dir.path().join("scenes");
        let paths = gen_scenes(&cfg, &scenes).unwrap();
        let model_dir = dir.path().join("model");
        let model = train_surrogate_job(&cfg, &scenes, &model_dir).unwrap();
        assert_eq!(load_surrogate(&model_dir).unwrap(), model);
        let cm = eval_job(&cfg, &model_dir, &scenes, &dir.path().join("eval")).unwrap();
        assert!(cm.total() > 0);
        let ply = dir.path().join("x.ply");
        export_ply_job(&cfg, &model_dir, &paths[0], &ply).unwrap();
        let text = std::fs::read_to_string(&ply).unwrap();
        let n = read_scan(&paths[0]).unwrap().len();
        assert!(text.contains(&format!("element vertex {n}\n")));
        let st = stats(&cfg, &scenes).unwrap();
        assert_eq!(st.points, st.labeled_points);
        assert_eq!(st.class_counts.iter().sum::<usize>() + st.ignored_points, st.points);
    }
}
