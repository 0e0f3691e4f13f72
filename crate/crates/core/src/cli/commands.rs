use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Command, DataKind, PlanKind, RunConfig};
use crate::attention::{DcnModel, HeadKind};
use crate::cost::{plan_cost, size_sweep, Plan, CSV_HEADER};
use crate::data::{
    normalize_to_u8, read_container, synth_cluttered, synth_multidigit, to_tensor, write_container, write_pgm, CanvasSpec,
    Dataset,
};
use crate::error::{Error, Result};
use crate::nn::{read_checkpoint_as, write_checkpoint, Optimizer};
use crate::seq::{predict_sequences, sequence_error, SeqPlan};
use crate::training::{evaluate, fit, Checkpointing, Objective, TrainConfig, Trainable};

/// Files written by a command, removed again if the command fails.
struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
}

impl Outputs {
    fn open(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            created_dir,
            files: Vec::new(),
            dirs: Vec::new(),
        })
    }

    fn file(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn subdir(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        if !p.exists() {
            self.dirs.push(p.clone());
        }
        p
    }

    fn rollback(self) {
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        for d in &self.dirs {
            let _ = fs::remove_dir_all(d);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

/// Executes a validated configuration. Partial outputs are removed when
/// the command fails.
pub fn run(cfg: &RunConfig) -> Result<()> {
    if rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global().is_err() {
        warn!("worker pool already initialized; --threads ignored");
    }
    let echo = cfg.echo();
    info!("resolved configuration:\n{echo}");
    let mut out = Outputs::open(&cfg.out)?;
    let result = fs::write(out.file("config.txt"), &echo)
        .map_err(Error::from)
        .and_then(|_| match cfg.command {
            Command::Synth => synth(cfg, &mut out),
            Command::Train => train(cfg, &mut out),
            Command::Eval => eval(cfg, &mut out),
            Command::Bench => bench(cfg, &mut out),
            Command::Saliency => saliency(cfg, &mut out),
        });
    if result.is_err() {
        out.rollback();
    }
    result
}

fn canvas_spec(cfg: &RunConfig) -> CanvasSpec {
    let (h, w) = cfg.input.unwrap_or(cfg.kind.default_size());
    match cfg.kind {
        DataKind::Cluttered => CanvasSpec {
            height: h,
            width: w,
            ..CanvasSpec::cluttered(h.min(w), cfg.seed)
        },
        DataKind::Centred => CanvasSpec::centred(h, w, cfg.seed),
        DataKind::Wild => CanvasSpec::wild(h, w, (h * 7 / 24).max(1), cfg.seed),
    }
}

fn synth(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let spec = canvas_spec(cfg);
    let data = match cfg.kind {
        DataKind::Cluttered => synth_cluttered(&spec, cfg.n)?,
        _ => synth_multidigit(&spec, cfg.n)?,
    };
    let name = cfg.kind.name();
    write_container(&data, &out.file(&format!("{name}.dcn")))?;
    for i in 0..data.len().min(4) {
        write_pgm(&out.file(&format!("{name}_{i}.pgm")), data.image(i), data.height, data.width)?;
    }
    println!("{name}: {} examples of {}x{}", data.len(), data.height, data.width);
    Ok(())
}

fn load_model(cfg: &RunConfig) -> Result<DcnModel<f32>> {
    let mut model = DcnModel::preset(&cfg.preset, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    if let Some(c) = cfg.context {
        model.context = c;
    }
    if let Some(path) = &cfg.checkpoint {
        model.load_state(&read_checkpoint_as::<f32>(path)?)?;
    }
    Ok(model)
}

fn load_data(path: &Option<PathBuf>) -> Result<Option<Dataset>> {
    path.as_ref().map(|p| read_container(p)).transpose()
}

fn objective(plan: PlanKind) -> Result<Objective> {
    match plan {
        PlanKind::Dcn => Ok(Objective::Dcn),
        PlanKind::Coarse => Ok(Objective::Coarse),
        PlanKind::Fine => Ok(Objective::Fine),
        PlanKind::SoftAttention => Err(Error::Invalid("soft-attention has no trainable model".into())),
    }
}

fn train(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let data = load_data(&cfg.data)?.ok_or(Error::Empty("dataset"))?;
    let test = load_data(&cfg.test)?;
    let mut model = load_model(cfg)?;
    let opt = Optimizer::new(Optimizer::adam().kind, cfg.lr);
    let tc = TrainConfig {
        k: cfg.k,
        batch_size: cfg.batch,
        epochs: cfg.epochs,
        lambda: cfg.lambda,
        coarse_opt: opt.clone(),
        fine_opt: opt.clone(),
        top_opt: opt,
        trainable: Trainable::ALL,
        validation: 0.1,
        checkpoint: (cfg.checkpoint_every > 0).then(|| Checkpointing {
            every: cfg.checkpoint_every,
            dir: out.subdir("checkpoints"),
        }),
        seed: cfg.seed,
    };
    let log = fit(&mut model, &data, test.as_ref(), objective(cfg.plan)?, &tc)?;
    fs::write(out.file("train_log.csv"), log.to_csv())?;
    write_checkpoint(&out.file("model.ckpt"), &model.state())?;
    if let Some(r) = log.last() {
        println!("epoch {} train_loss {:.4} test_error {:.4}", r.epoch, r.train_loss, r.test_error);
    }
    Ok(())
}

fn eval(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let data = load_data(&cfg.data)?.ok_or(Error::Empty("dataset"))?;
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let model = load_model(cfg)?;
    let error = match (model.head, cfg.plan) {
        (HeadKind::Sequence, plan @ (PlanKind::Dcn | PlanKind::Coarse | PlanKind::SoftAttention)) => {
            let seq_plan = match plan {
                PlanKind::Dcn => SeqPlan::Dcn { k: cfg.k },
                PlanKind::Coarse => SeqPlan::CoarseAverage,
                _ => SeqPlan::SoftAttention,
            };
            let mut preds = Vec::with_capacity(data.len());
            let idx: Vec<usize> = (0..data.len()).collect();
            for chunk in idx.chunks(64) {
                preds.extend(predict_sequences(&model, &to_tensor::<f32>(&data, chunk)?, seq_plan, &cfg.scales)?);
            }
            sequence_error(&preds, &data.labels)?
        }
        (HeadKind::Classes(_), PlanKind::SoftAttention) => {
            return Err(Error::Invalid("soft-attention evaluation needs a sequence preset".into()))
        }
        (_, plan) => evaluate(&model, &data, objective(plan)?, cfg.k, cfg.mode)?,
    };
    let k = if cfg.plan == PlanKind::Dcn { cfg.k } else { 0 };
    let csv = format!("plan,k,examples,error\n{},{k},{},{error:.6}\n", cfg.plan.name(), data.len());
    fs::write(out.file("eval.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn default_input(preset: &str) -> (usize, usize) {
    match preset {
        "cmnist" => (100, 100),
        "toy" => (28, 28),
        "svhn" => (64, 128),
        _ => (48, 96),
    }
}

fn bench(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let model = load_model(cfg)?;
    let input = cfg.input.unwrap_or(default_input(&cfg.preset));
    let dcn = Plan::Dcn {
        k: cfg.k,
        scales: cfg.scales.clone(),
        mode: cfg.mode,
    };
    let reports = [
        plan_cost(&model, &Plan::Coarse, input)?,
        plan_cost(&model, &Plan::Fine, input)?,
        plan_cost(&model, &dcn, input)?,
    ];
    let mut csv = format!("{CSV_HEADER}\n");
    for r in &reports {
        let _ = writeln!(csv, "{}", r.csv_row());
    }
    fs::write(out.file("bench.csv"), &csv)?;
    let mut tables = String::new();
    for r in &reports {
        let _ = writeln!(tables, "# {} {}x{} k={}\n{}", r.plan, input.0, input.1, r.k, r.table());
    }
    fs::write(out.file("bench_layers.txt"), &tables)?;

    let mut sweep = format!("{CSV_HEADER}\n");
    for &s in &cfg.sizes {
        match size_sweep(&model, &[s], &[1, 2, 4, 8, 16], cfg.mode) {
            Ok(rows) => {
                for r in rows {
                    let _ = writeln!(sweep, "{}", r.csv_row());
                }
            }
            Err(e) => warn!("sweep size {s} skipped: {e}"),
        }
    }
    fs::write(out.file("sweep.csv"), &sweep)?;
    print!("{csv}");
    print!("{}", reports[2].table());
    Ok(())
}

fn saliency(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let data = load_data(&cfg.data)?.ok_or(Error::Empty("dataset"))?;
    let model = load_model(cfg)?;
    let count = cfg.n.min(data.len());
    for i in 0..count {
        let x = to_tensor::<f32>(&data, &[i])?;
        let result = model.infer(&x, cfg.k, cfg.mode)?;
        let map = &result.saliency[0];
        write_pgm(
            &out.file(&format!("saliency_{i}.pgm")),
            &normalize_to_u8(&map.values),
            map.rows,
            map.cols,
        )?;
        write_pgm(&out.file(&format!("image_{i}.pgm")), data.image(i), data.height, data.width)?;
        let set = &result.patches[0];
        let mut boxes = String::new();
        for (&(r, c), &(top, left)) in set.positions.iter().zip(&set.origins) {
            let _ = writeln!(boxes, "{r} {c} {top} {left} {} {}", set.size.0, set.size.1);
        }
        fs::write(out.file(&format!("boxes_{i}.txt")), boxes)?;
    }
    println!("saliency maps for {count} examples in {}", cfg.out.display());
    Ok(())
}
