//! End-to-end runs: teacher and student training, evaluation, run
//! directories and the aggregated reproduction tables.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{load_checkpoint, save_checkpoint, ParamStore, Tape};
use crate::config::{ExperimentConfig, Mode, Scale, Task};
use crate::dynamics::{FieldKind, LatentField};
use crate::error::{Error, Result};
use crate::eval::{
    encode_anchors, eval_anchors, fit_model_alignment, hamiltonian_grid_export, learned_energy_profiles, ph_grid_point,
    r2_identification, r2_projection, std_dev, write_grid_csv, EnergySummary, FlowModel, LatentModel, MetricsReport,
    StudentModel,
};
use crate::odeint::{generate_dataset, Dataset, Trajectory};
use crate::student::{student_rollout, Student, StudentLosses, StudentTrainer};
use crate::teacher::{Objective, StepStats, TeacherArch, TeacherModel, TeacherTrainer};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

// RNG streams kept clear of the per-trajectory dataset streams.
const TEACHER_STREAM: u64 = 1 << 40;
const STUDENT_STREAM: u64 = 2 << 40;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn dataset_for(cfg: &ExperimentConfig) -> Result<Dataset> {
    generate_dataset(&cfg.dataset, cfg.seed).map_err(|e| e.context("generate"))
}

/// Architecture trained by `cfg.mode`; one-stage and supervised runs put a
/// port-Hamiltonian field directly on the latent.
pub fn teacher_arch(cfg: &ExperimentConfig) -> TeacherArch {
    let (field, dissipative) = match cfg.mode {
        Mode::Teacher | Mode::Student => (FieldKind::UnconstrainedMlp, false),
        Mode::Onestage | Mode::Supervised => (FieldKind::PortHamiltonian, cfg.student.dissipative),
    };
    TeacherArch { encoder: cfg.encoder.clone(), field, field_hidden: cfg.teacher.field_hidden.clone(), dissipative }
}

/// Short label for reports: the mode plus any ablation.
pub fn variant_name(cfg: &ExperimentConfig) -> String {
    if cfg.ablation.causal_encoder {
        format!("{}_causal", cfg.mode.name())
    } else {
        cfg.mode.name().to_string()
    }
}

/// What a run directory holds, beside the resolved config.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelCard {
    pub mode: Mode,
    pub task: Task,
    pub seed: u64,
    pub arch: TeacherArch,
    pub obs_dim: usize,
    pub dt: f64,
    /// Teacher run this student was distilled from.
    pub teacher_dir: Option<PathBuf>,
    pub version: String,
}

pub struct TrainedTeacher {
    pub mode: Mode,
    pub model: TeacherModel,
    pub live: ParamStore,
    pub ema: ParamStore,
    pub dt: f64,
    pub log: Vec<StepStats>,
    pub wall_seconds: f64,
}

impl TrainedTeacher {
    /// The EMA weights, which every downstream use reads.
    pub fn flow_model(&self) -> FlowModel<'_> {
        FlowModel { encoder: &self.model.encoder, field: &self.model.field, store: &self.ema, dt: self.dt }
    }
}

struct JsonLines(Option<BufWriter<File>>);

impl JsonLines {
    fn create(dir: Option<&Path>, name: &str) -> Result<Self> {
        Ok(JsonLines(match dir {
            Some(d) => Some(BufWriter::new(File::create(d.join(name))?)),
            None => None,
        }))
    }

    fn push<T: Serialize>(&mut self, row: &T) -> Result<()> {
        if let Some(w) = &mut self.0 {
            serde_json::to_writer(&mut *w, row)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if let Some(mut w) = self.0 {
            w.flush()?;
        }
        Ok(())
    }
}

fn write_card(
    dir: &Path,
    cfg: &ExperimentConfig,
    arch: &TeacherArch,
    obs_dim: usize,
    teacher_dir: Option<&Path>,
) -> Result<()> {
    let card = ModelCard {
        mode: cfg.mode,
        task: cfg.task,
        seed: cfg.seed,
        arch: arch.clone(),
        obs_dim,
        dt: cfg.dataset.dt,
        teacher_dir: teacher_dir.map(Path::to_path_buf),
        version: VERSION.to_string(),
    };
    fs::write(dir.join("model.json"), serde_json::to_string_pretty(&card)?)?;
    cfg.write(&dir.join("config.json"))
}

fn read_card(dir: &Path) -> Result<(ModelCard, ExperimentConfig)> {
    let path = dir.join("model.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let card: ModelCard = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok((card, ExperimentConfig::read(&dir.join("config.json"))?))
}

/// Trains an encoder + latent field per `cfg.mode` (teacher, onestage or
/// supervised). With `out`, writes the log, checkpoints and model card there.
pub fn train_teacher(cfg: &ExperimentConfig, data: &Dataset, out: Option<&Path>) -> Result<TrainedTeacher> {
    let objective = match cfg.mode {
        Mode::Teacher | Mode::Onestage => Objective::Contrastive,
        Mode::Supervised => Objective::Supervised,
        Mode::Student => return Err(Error::Config("train_teacher called in student mode".into())),
    };
    let started = Instant::now();
    let arch = teacher_arch(cfg);
    let obs_dim = cfg.dataset.obs_dim();
    let mut rng = rng_for(cfg.seed, TEACHER_STREAM);
    let mut live = ParamStore::new();
    let model = TeacherModel::new(&mut live, &arch, obs_dim, &mut rng)?;
    let mut trainer = TeacherTrainer::new(
        model,
        live,
        cfg.contrastive.clone(),
        cfg.teacher.optimizer.clone(),
        objective,
        cfg.teacher.batch_size,
        cfg.dataset.dt,
        rng,
    )?;
    if let Some(d) = out {
        fs::create_dir_all(d)?;
        write_card(d, cfg, &arch, obs_dim, None)?;
    }
    let mut log_file = JsonLines::create(out, "log.jsonl")?;
    let mut log = Vec::new();
    for step in 0..cfg.teacher.steps {
        let stats =
            trainer.train_step(&data.train).map_err(|e| e.context(&format!("{} step {step}", cfg.mode.name())))?;
        if step % cfg.teacher.log_every.max(1) == 0 || step + 1 == cfg.teacher.steps {
            log::info!(
                "{} step {step}: loss {:.5} lr {:.2e} |g| {:.3}",
                cfg.mode.name(),
                stats.loss,
                stats.lr,
                stats.grad_norm
            );
            log_file.push(&stats)?;
            log.push(stats);
        }
        if let Some(d) = out {
            let every = cfg.teacher.checkpoint_every;
            if every > 0 && (step + 1) % every == 0 && step + 1 < cfg.teacher.steps {
                let ck = d.join("checkpoints");
                fs::create_dir_all(&ck)?;
                save_checkpoint(&trainer.ema, &ck.join(format!("step_{}_ema", step + 1)), false)?;
            }
        }
    }
    log_file.finish()?;
    let teacher = TrainedTeacher {
        mode: cfg.mode,
        model: trainer.model,
        live: trainer.live,
        ema: trainer.ema,
        dt: cfg.dataset.dt,
        log,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    if let Some(d) = out {
        save_checkpoint(&teacher.live, &d.join("live"), true)?;
        save_checkpoint(&teacher.ema, &d.join("ema"), false)?;
    }
    Ok(teacher)
}

/// Restores a run written by [`train_teacher`].
pub fn load_teacher(dir: &Path) -> Result<(ExperimentConfig, TrainedTeacher)> {
    let (card, cfg) = read_card(dir)?;
    if card.mode == Mode::Student {
        return Err(Error::Data(format!("{} holds a student, not a teacher", dir.display())));
    }
    let ema = load_checkpoint(&dir.join("ema"))?;
    let live = load_checkpoint(&dir.join("live"))?;
    let model = TeacherModel::attach(&ema, &card.arch).map_err(|e| e.context("teacher checkpoint"))?;
    let teacher = TrainedTeacher { mode: card.mode, model, live, ema, dt: card.dt, log: Vec::new(), wall_seconds: 0.0 };
    Ok((cfg, teacher))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudentLogRow {
    #[serde(flatten)]
    pub stats: StepStats,
    pub terms: StudentLosses,
}

pub struct TrainedStudent {
    pub student: Student,
    pub store: ParamStore,
    pub log: Vec<StudentLogRow>,
    pub wall_seconds: f64,
}

/// Teacher latents `z` at every valid training anchor and the frozen
/// teacher's tangents `f_T(z)` there.
pub fn student_anchor_pool(teacher: &TrainedTeacher, train: &[Trajectory]) -> Result<(Array2<f64>, Array2<f64>)> {
    let enc = &teacher.model.encoder.cfg;
    let anchors: Vec<(usize, usize)> =
        train.iter().enumerate().flat_map(|(i, t)| enc.valid_anchors(t.len()).map(move |a| (i, a))).collect();
    if anchors.is_empty() {
        return Err(Error::Data("no valid student anchors in the training split".into()));
    }
    let z = encode_anchors(&teacher.flow_model(), train, &anchors)?;
    let tape = Tape::new();
    let f_t = teacher.model.field.bind(&tape, &teacher.ema)?.eval(tape.constant(z.clone()))?.value();
    Ok((z, f_t))
}

/// Distils a port-Hamiltonian student from the frozen EMA teacher.
pub fn train_student(
    cfg: &ExperimentConfig,
    teacher: &TrainedTeacher,
    data: &Dataset,
    out: Option<&Path>,
    teacher_dir: Option<&Path>,
) -> Result<TrainedStudent> {
    if !matches!(teacher.model.field, LatentField::Mlp(_)) {
        return Err(Error::Config(format!(
            "students distil an unconstrained teacher, got a {} run",
            teacher.mode.name()
        )));
    }
    let started = Instant::now();
    let (z, f_t) = student_anchor_pool(teacher, &data.train).map_err(|e| e.context("student anchors"))?;
    let mut rng = rng_for(cfg.seed, STUDENT_STREAM);
    let mut store = ParamStore::new();
    let d = cfg.encoder.latent_dim;
    let student = Student::new(&mut store, d, &cfg.student.hidden, cfg.student.dissipative, &mut rng)?;
    let mut trainer = StudentTrainer::new(
        student,
        store,
        cfg.student.weights.clone(),
        cfg.student.optimizer.clone(),
        cfg.student.batch_size,
        rng,
    )?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut scfg = cfg.clone();
        scfg.mode = Mode::Student;
        write_card(dir, &scfg, &teacher.model.arch, cfg.dataset.obs_dim(), teacher_dir)?;
    }
    let mut log_file = JsonLines::create(out, "log.jsonl")?;
    let mut log = Vec::new();
    for step in 0..cfg.student.steps {
        let (stats, terms) = trainer.train_step(&z, &f_t).map_err(|e| e.context(&format!("student step {step}")))?;
        if step % cfg.student.log_every.max(1) == 0 || step + 1 == cfg.student.steps {
            log::info!("student step {step}: loss {:.5} (dir {:.4} mag {:.4})", stats.loss, terms.dir, terms.mag);
            let row = StudentLogRow { stats, terms };
            log_file.push(&row)?;
            log.push(row);
        }
    }
    log_file.finish()?;
    if let Some(dir) = out {
        save_checkpoint(&trainer.store, &dir.join("student"), true)?;
    }
    Ok(TrainedStudent {
        student: trainer.student,
        store: trainer.store,
        log,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Restores a student run and the teacher it names.
pub fn load_student(dir: &Path) -> Result<(ExperimentConfig, TrainedStudent, PathBuf)> {
    let (card, cfg) = read_card(dir)?;
    if card.mode != Mode::Student {
        return Err(Error::Data(format!("{} holds a {} run, not a student", dir.display(), card.mode.name())));
    }
    let store = load_checkpoint(&dir.join("student"))?;
    let student = Student::attach(&store, cfg.encoder.latent_dim, &cfg.student.hidden, cfg.student.dissipative)
        .map_err(|e| e.context("student checkpoint"))?;
    let teacher_dir =
        card.teacher_dir.ok_or_else(|| Error::Data(format!("{}: student card names no teacher", dir.display())))?;
    Ok((cfg, TrainedStudent { student, store, log: Vec::new(), wall_seconds: 0.0 }, teacher_dir))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Evaluation {
    pub teacher: MetricsReport,
    pub student: Option<MetricsReport>,
}

fn spread_pick<T: Copy>(xs: &[T], n: usize) -> Vec<T> {
    if xs.len() <= n {
        return xs.to_vec();
    }
    (0..n).map(|i| xs[i * xs.len() / n]).collect()
}

/// Identification, projection and energy metrics on the test split. The
/// alignment is fitted on train anchors. Writes reports, curves and the
/// Hamiltonian grid to `out` when given.
pub fn evaluate(
    cfg: &ExperimentConfig,
    data: &Dataset,
    teacher: &TrainedTeacher,
    student: Option<&TrainedStudent>,
    out: Option<&Path>,
) -> Result<Evaluation> {
    if let Some(d) = out {
        fs::create_dir_all(d)?;
    }
    let e = &cfg.eval;
    let window = teacher.model.encoder.cfg.window;
    let train_anchors = eval_anchors(&data.train, window, e.horizon, e.anchor_stride, e.anchor_cap);
    let test_anchors = eval_anchors(&data.test, window, e.horizon, e.anchor_stride, e.anchor_cap);
    let energy_anchors = spread_pick(&test_anchors, e.energy_rollouts);
    let flow = teacher.flow_model();

    let started = Instant::now();
    let align =
        fit_model_alignment(&flow, &data.train, &train_anchors).map_err(|err| err.context("teacher alignment"))?;
    let curve = r2_identification(&flow, &align, &data.test, &test_anchors, e.horizon)?;
    let z0 = encode_anchors(&flow, &data.test, &energy_anchors)?;
    let teacher_energy = match (&teacher.model.field, student) {
        (LatentField::PortHamiltonian(ph), _) => {
            let roll = flow.rollout(&z0, e.energy_steps)?;
            Some(EnergySummary::from_profiles(
                "learned",
                &learned_energy_profiles(ph, &teacher.ema, &roll, teacher.dt)?,
                e.monotone_slack,
            )?)
        }
        (LatentField::Mlp(_), Some(s)) => {
            // The unconstrained teacher has no energy of its own; read it
            // through the student's chart and H.
            let chart = s.student.chart.values(&s.store)?;
            let roll: Vec<_> = flow.rollout(&z0, e.energy_steps)?.iter().map(|z| chart.forward(z)).collect();
            let profiles = learned_energy_profiles(&s.student.ph, &s.store, &roll, teacher.dt)?;
            Some(EnergySummary::from_profiles("student_h", &profiles, e.monotone_slack)?)
        }
        (LatentField::Mlp(_), None) => None,
    };
    let teacher_report = MetricsReport {
        task: cfg.task.name().to_string(),
        model: variant_name(&ExperimentConfig { mode: teacher.mode, ..cfg.clone() }),
        seed: cfg.seed,
        auc_r2_id: curve.auc,
        auc_r2_id_std_anchors: curve.auc_std_anchors,
        r2_id_curve: curve.per_horizon,
        auc_r2_proj: None,
        auc_r2_proj_std_anchors: None,
        r2_proj_curve: None,
        energy: teacher_energy,
        wall_seconds: teacher.wall_seconds + started.elapsed().as_secs_f64(),
    };
    if let LatentField::PortHamiltonian(ph) = &teacher.model.field {
        if let Some(d) = out {
            let bounds = grid_bounds(&encode_anchors(&flow, &data.train, &train_anchors)?);
            let rows = hamiltonian_grid_export(|x| ph_grid_point(ph, &teacher.ema, x), bounds, e.grid_resolution)?;
            write_grid_csv(&d.join("hamiltonian_grid.csv"), &rows)?;
        }
    }

    let student_report = match student {
        None => None,
        Some(s) => {
            let started = Instant::now();
            let sm = StudentModel { teacher: &flow, student: &s.student, store: &s.store, dt: teacher.dt };
            let align_s = fit_model_alignment(&sm, &data.train, &train_anchors)
                .map_err(|err| err.context("student alignment"))?;
            let curve_s = r2_identification(&sm, &align_s, &data.test, &test_anchors, e.horizon)?;
            let proj = r2_projection(&sm, &data.test, &test_anchors, e.horizon)?;
            let roll = student_rollout(&s.student, &s.store, &z0, e.energy_steps, teacher.dt)?;
            let profiles = learned_energy_profiles(&s.student.ph, &s.store, &roll.x, teacher.dt)?;
            if let Some(d) = out {
                let x_train =
                    s.student.chart.values(&s.store)?.forward(&encode_anchors(&flow, &data.train, &train_anchors)?);
                let rows = hamiltonian_grid_export(
                    |x| ph_grid_point(&s.student.ph, &s.store, x),
                    grid_bounds(&x_train),
                    e.grid_resolution,
                )?;
                write_grid_csv(&d.join("hamiltonian_grid.csv"), &rows)?;
            }
            Some(MetricsReport {
                task: cfg.task.name().to_string(),
                model: "student".into(),
                seed: cfg.seed,
                auc_r2_id: curve_s.auc,
                auc_r2_id_std_anchors: curve_s.auc_std_anchors,
                r2_id_curve: curve_s.per_horizon,
                auc_r2_proj: Some(proj.auc),
                auc_r2_proj_std_anchors: Some(proj.auc_std_anchors),
                r2_proj_curve: Some(proj.per_horizon),
                energy: Some(EnergySummary::from_profiles("learned", &profiles, e.monotone_slack)?),
                wall_seconds: s.wall_seconds + started.elapsed().as_secs_f64(),
            })
        }
    };
    if let Some(d) = out {
        let t = &teacher_report.model;
        teacher_report.write_json(&d.join(format!("metrics_{t}.json")))?;
        teacher_report.write_curves_csv(&d.join(format!("curves_{t}.csv")))?;
        if let Some(r) = &student_report {
            r.write_json(&d.join("metrics_student.json"))?;
            r.write_curves_csv(&d.join("curves_student.csv"))?;
        }
    }
    Ok(Evaluation { teacher: teacher_report, student: student_report })
}

/// Bounding box of the first two columns, padded by 10%.
fn grid_bounds(x: &Array2<f64>) -> [(f64, f64); 2] {
    let mut b = [(0.0, 0.0); 2];
    for (j, slot) in b.iter_mut().enumerate() {
        let col = x.column(j);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = 0.1 * (hi - lo).max(1e-6);
        *slot = (lo - pad, hi + pad);
    }
    b
}

/// One trained model of a reproduction table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Teacher,
    Student,
    Onestage,
    Supervised,
    TeacherCausal,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Teacher => "teacher",
            Variant::Student => "student",
            Variant::Onestage => "onestage",
            Variant::Supervised => "supervised",
            Variant::TeacherCausal => "teacher_causal",
        }
    }
}

/// Trains and evaluates the requested variants for one (task, seed). The
/// student needs, and reuses, the windowed teacher.
pub fn run_variants(
    base: &ExperimentConfig,
    variants: &[Variant],
    out: Option<&Path>,
) -> Result<BTreeMap<Variant, MetricsReport>> {
    let data = dataset_for(base)?;
    let sub = |name: &str| out.map(|d| d.join(name));
    let mut reports = BTreeMap::new();
    let want = |v| variants.contains(&v);
    if want(Variant::Teacher) || want(Variant::Student) {
        let cfg = ExperimentConfig { mode: Mode::Teacher, ..base.clone() };
        let tdir = sub("teacher");
        let teacher = train_teacher(&cfg, &data, tdir.as_deref()).map_err(|e| e.context("train teacher"))?;
        let student = if want(Variant::Student) {
            let sdir = sub("student");
            Some(
                train_student(&cfg, &teacher, &data, sdir.as_deref(), tdir.as_deref())
                    .map_err(|e| e.context("train student"))?,
            )
        } else {
            None
        };
        let ev = evaluate(&cfg, &data, &teacher, student.as_ref(), sub("eval").as_deref())
            .map_err(|e| e.context("evaluate teacher"))?;
        if want(Variant::Teacher) {
            reports.insert(Variant::Teacher, ev.teacher);
        }
        if let Some(r) = ev.student {
            reports.insert(Variant::Student, r);
        }
    }
    for (v, mode, causal) in [
        (Variant::Onestage, Mode::Onestage, false),
        (Variant::Supervised, Mode::Supervised, false),
        (Variant::TeacherCausal, Mode::Teacher, true),
    ] {
        if !want(v) {
            continue;
        }
        let mut cfg = ExperimentConfig { mode, ..base.clone() };
        cfg.ablation.causal_encoder = causal;
        cfg.encoder.causal_mode = causal;
        let dir = sub(v.name());
        let model =
            train_teacher(&cfg, &data, dir.as_deref()).map_err(|e| e.context(&format!("train {}", v.name())))?;
        let ev = evaluate(&cfg, &data, &model, None, dir.map(|d| d.join("eval")).as_deref())
            .map_err(|e| e.context(&format!("evaluate {}", v.name())))?;
        reports.insert(v, ev.teacher);
    }
    Ok(reports)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Table {
    T1PendulumNumeric,
    T1DuffingNumeric,
    AblationCausal,
    AblationSupervised,
}

impl Table {
    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown table {s:?}; expected t1_pendulum_numeric, t1_duffing_numeric, ablation_causal or ablation_supervised")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Table::T1PendulumNumeric => "t1_pendulum_numeric",
            Table::T1DuffingNumeric => "t1_duffing_numeric",
            Table::AblationCausal => "ablation_causal",
            Table::AblationSupervised => "ablation_supervised",
        }
    }

    /// Tasks and variants making up the table.
    pub fn cells(self) -> Vec<(Task, Vec<Variant>)> {
        let both = [Task::PendulumNumeric, Task::DuffingNumeric];
        match self {
            Table::T1PendulumNumeric => {
                vec![(Task::PendulumNumeric, vec![Variant::Teacher, Variant::Student, Variant::Onestage])]
            }
            Table::T1DuffingNumeric => {
                vec![(Task::DuffingNumeric, vec![Variant::Teacher, Variant::Student, Variant::Onestage])]
            }
            Table::AblationCausal => {
                both.iter().map(|&t| (t, vec![Variant::Teacher, Variant::TeacherCausal])).collect()
            }
            Table::AblationSupervised => {
                both.iter().map(|&t| (t, vec![Variant::Teacher, Variant::Supervised])).collect()
            }
        }
    }
}

/// Mean ± std over seeds of one (task, variant).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub task: String,
    pub variant: String,
    pub seeds: Vec<u64>,
    pub auc_r2_id_mean: f64,
    pub auc_r2_id_std_seeds: f64,
    /// Mean over seeds of the within-run std over anchors.
    pub auc_r2_id_std_anchors: f64,
    pub auc_r2_proj_mean: Option<f64>,
    pub auc_r2_proj_std_seeds: Option<f64>,
    pub auc_r2_proj_std_anchors: Option<f64>,
}

pub fn summarize(task: Task, variant: Variant, reports: &[MetricsReport]) -> SummaryRow {
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len().max(1) as f64;
    let id: Vec<f64> = reports.iter().map(|r| r.auc_r2_id).collect();
    let id_anchor: Vec<f64> = reports.iter().map(|r| r.auc_r2_id_std_anchors).collect();
    let proj: Option<Vec<f64>> = reports.iter().map(|r| r.auc_r2_proj).collect();
    let proj_anchor: Option<Vec<f64>> = reports.iter().map(|r| r.auc_r2_proj_std_anchors).collect();
    SummaryRow {
        task: task.name().into(),
        variant: variant.name().into(),
        seeds: reports.iter().map(|r| r.seed).collect(),
        auc_r2_id_mean: mean(&id),
        auc_r2_id_std_seeds: std_dev(&id),
        auc_r2_id_std_anchors: mean(&id_anchor),
        auc_r2_proj_mean: proj.as_deref().map(mean),
        auc_r2_proj_std_seeds: proj.as_deref().map(std_dev),
        auc_r2_proj_std_anchors: proj_anchor.as_deref().map(mean),
    }
}

pub fn summary_markdown(table: Table, scale: Scale, rows: &[SummaryRow]) -> String {
    let mut md = format!(
        "# {} ({} scale)\n\nMean ± std over seeds; anchor std is the mean within-run std over evaluation anchors.\n\n",
        table.name(),
        if scale == Scale::Desk { "desk" } else { "full" }
    );
    md.push_str("| task | variant | AUC-R²_id | anchor std | AUC-R²_proj | anchor std |\n|---|---|---|---|---|---|\n");
    for r in rows {
        let proj = match (r.auc_r2_proj_mean, r.auc_r2_proj_std_seeds) {
            (Some(m), Some(s)) => format!("{m:.3} ± {s:.3}"),
            _ => "–".into(),
        };
        let proj_a = r.auc_r2_proj_std_anchors.map_or("–".into(), |s| format!("{s:.3}"));
        md.push_str(&format!(
            "| {} | {} | {:.3} ± {:.3} | {:.3} | {proj} | {proj_a} |\n",
            r.task, r.variant, r.auc_r2_id_mean, r.auc_r2_id_std_seeds, r.auc_r2_id_std_anchors
        ));
    }
    md
}

/// Runs every cell of `table` over `seeds` and writes `summary.json` /
/// `summary.md` into `out`. Each task's config is resolved from the same file
/// and overrides, with task, seed and mode set per cell.
pub fn reproduce(
    table: Table,
    file: Option<&Path>,
    overrides: &[String],
    seeds: &[u64],
    out: &Path,
) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    let mut scale = Scale::Desk;
    for (task, variants) in table.cells() {
        let mut per_variant: BTreeMap<Variant, Vec<MetricsReport>> = BTreeMap::new();
        for &seed in seeds {
            let mut sets = overrides.to_vec();
            sets.extend([format!("task={}", task.name()), format!("seed={seed}"), "mode=teacher".into()]);
            let cfg = ExperimentConfig::resolve(file, &sets)?;
            scale = cfg.scale;
            let dir = out.join(task.name()).join(format!("seed{seed}"));
            fs::create_dir_all(&dir)?;
            cfg.write(&dir.join("config.json"))?;
            let reports = run_variants(&cfg, &variants, Some(&dir))
                .map_err(|e| e.context(&format!("{} seed {seed}", task.name())))?;
            for (v, r) in reports {
                per_variant.entry(v).or_default().push(r);
            }
        }
        for v in variants {
            rows.push(summarize(task, v, per_variant.get(&v).map_or(&[][..], |r| r.as_slice())));
        }
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&rows)?)?;
    fs::write(out.join("summary.md"), summary_markdown(table, scale, &rows))?;
    Ok(rows)
}
