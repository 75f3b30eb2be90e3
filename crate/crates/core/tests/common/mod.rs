#![allow(dead_code)]

use std::collections::BTreeMap;

use oll_core::datagen::{generate_dataset, Dataset, DatasetConfig};
use oll_core::model::{EncoderPath, ModelConfig, ModelParams, PetGrad, PetKind};
use oll_core::numerics::{finite_diff_grad, relative_error, Matrix, SeededRng, FD_STEP};
use oll_core::objective::{ait_loss, sit_loss, LossOutput, Strategy};
use oll_core::streams::{ClassRole, Regime, StreamSchedule};
use oll_core::ClassId;

pub fn small_dataset(classes: usize, per_class: usize, seed: u64) -> Dataset {
    generate_dataset(
        &DatasetConfig {
            num_classes: classes,
            held_out_count: 1,
            per_class_train: per_class,
            per_class_test: 1,
            d_in: 3,
            ..Default::default()
        },
        seed,
    )
    .unwrap()
}

/// Checks a schedule against the stream contract without reusing any of the
/// scheduler's arithmetic. Returns the first violated invariant.
pub fn check_schedule(ds: &Dataset, s: &StreamSchedule) -> Result<(), String> {
    let cfg = &s.config;
    if s.tasks.len() != cfg.tasks {
        return Err(format!("{} tasks, expected {}", s.tasks.len(), cfg.tasks));
    }

    let mut streamed: Vec<usize> = s.tasks.iter().flatten().copied().collect();
    streamed.sort_unstable();
    let expected: Vec<usize> = (0..ds.train.len()).filter(|&i| !ds.is_held_out(ds.train[i].y)).collect();
    if streamed != expected {
        return Err("streamed samples are not a permutation of the training set".into());
    }

    let trainable = ds.trainable_classes();
    let mut assigned: Vec<ClassId> = s.classes.iter().map(|a| a.class).collect();
    assigned.sort();
    if assigned != trainable {
        return Err("assignments do not cover each trainable class exactly once".into());
    }

    // counts[class][task]
    let mut counts: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (t, task) in s.tasks.iter().enumerate() {
        for &i in task {
            counts.entry(ds.train[i].y).or_insert_with(|| vec![0; cfg.tasks])[t] += 1;
        }
    }

    let m = if cfg.regime == Regime::Cil { 0 } else { cfg.blurry_level as usize };
    for a in &s.classes {
        if a.home_task >= cfg.tasks {
            return Err(format!("class {} homed in task {}", a.class, a.home_task));
        }
        let per_task = counts.get(&a.class).cloned().unwrap_or_else(|| vec![0; cfg.tasks]);
        let n: usize = per_task.iter().sum();
        let home = per_task[a.home_task];
        let want_home = match a.role {
            ClassRole::Disjoint => n,
            ClassRole::Blurry => n - (m * n) / 100,
        };
        if home != want_home {
            return Err(format!(
                "class {} ({:?}) has {home} of {n} samples at home, expected {want_home}",
                a.class, a.role
            ));
        }
    }

    let n_classes = trainable.len();
    let disjoint = s.classes.iter().filter(|a| a.role == ClassRole::Disjoint).count();
    match cfg.regime {
        Regime::Cil => {
            if disjoint != n_classes {
                return Err("CIL must have only disjoint classes".into());
            }
            let mut sizes = vec![0usize; cfg.tasks];
            s.classes.iter().for_each(|a| sizes[a.home_task] += 1);
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            if hi - lo > 1 || sizes.windows(2).any(|w| w[0] < w[1]) {
                return Err(format!("CIL class split not near-equal, remainder first: {sizes:?}"));
            }
        }
        Regime::SiBlurry | Regime::IBlurry => {
            let want = (cfg.disjoint_fraction * n_classes as f64 + 0.5).floor() as usize;
            if disjoint != want {
                return Err(format!("{disjoint} disjoint classes, expected {want}"));
            }
            if cfg.regime == Regime::SiBlurry && n_classes >= cfg.tasks {
                let mut homed = vec![false; cfg.tasks];
                s.classes.iter().for_each(|a| homed[a.home_task] = true);
                if homed.iter().any(|h| !h) {
                    return Err("a task is home to no class".into());
                }
            }
        }
    }
    if cfg.regime == Regime::IBlurry {
        for role in [ClassRole::Disjoint, ClassRole::Blurry] {
            let mut sizes = vec![0usize; cfg.tasks];
            s.classes.iter().filter(|a| a.role == role).for_each(|a| sizes[a.home_task] += 1);
            // Deal one class at a time, round robin from task 0.
            let total: usize = sizes.iter().sum();
            let mut dealt = vec![0usize; cfg.tasks];
            (0..total).for_each(|k| dealt[k % cfg.tasks] += 1);
            if sizes != dealt {
                return Err(format!("i-Blurry {role:?} homes {sizes:?}, expected {dealt:?}"));
            }
        }
    }
    Ok(())
}

/// Mean InfoNCE computed from already-normalized features. `labels[i]` is
/// the column of sample `i`'s positive.
pub fn oracle_loss(images: &[Vec<f64>], texts: &[Vec<f64>], labels: &[usize], tau: f64) -> f64 {
    let mut total = 0.0;
    for (v, &y) in images.iter().zip(labels) {
        let z: Vec<f64> = texts
            .iter()
            .map(|t| v.iter().zip(t).map(|(a, b)| a * b).sum::<f64>() / tau)
            .collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|zi| (zi - m).exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    total / images.len() as f64
}

/// A random small problem: model with non-zero PET factors, a batch and a
/// list of seen-class descriptors that covers the batch.
pub struct Problem {
    pub model: ModelParams,
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<ClassId>,
    pub descriptors: Vec<(ClassId, Vec<f64>)>,
}

impl Problem {
    pub fn random(seed: u64, kind: PetKind, max_batch: usize, max_seen: usize) -> Self {
        let mut rng = SeededRng::new(seed);
        let d_in = 3 + rng.below(4);
        let d_desc = 3 + rng.below(4);
        let d_embed = 2 + rng.below(d_in.min(d_desc) - 1);
        let config = ModelConfig {
            d_in,
            d_desc,
            d_embed,
            pet_kind: kind,
            pet_rank: 1 + rng.below(d_embed.min(3)),
            adapter_down_dim: 2 + rng.below(4),
            lora_alpha: 0.5 + 4.0 * rng.uniform(),
            tune_image: true,
            tune_text: true,
            temperature: 0.05 + 0.5 * rng.uniform(),
            ..Default::default()
        };
        let mut model = ModelParams::init(&config, seed).unwrap();
        let n = model.trainable_count();
        model.set_trainable(&rng.gaussian_vec(n, 0.3)).unwrap();

        let seen = 1 + rng.below(max_seen);
        let batch = 1 + rng.below(max_batch);
        let mut ids: Vec<u32> = (0..200).collect();
        rng.shuffle(&mut ids);
        let descriptors: Vec<(ClassId, Vec<f64>)> = ids[..seen]
            .iter()
            .map(|&c| (ClassId(c), rng.gaussian_vec(d_desc, 1.0)))
            .collect();
        let labels: Vec<ClassId> = (0..batch).map(|_| descriptors[rng.below(seen)].0).collect();
        let images = (0..batch).map(|_| rng.gaussian_vec(d_in, 1.0)).collect();
        Problem {
            model,
            images,
            labels,
            descriptors,
        }
    }

    pub fn image_refs(&self) -> Vec<&[f64]> {
        self.images.iter().map(Vec::as_slice).collect()
    }

    pub fn descriptor_refs(&self) -> Vec<(ClassId, &[f64])> {
        self.descriptors.iter().map(|(c, d)| (*c, d.as_slice())).collect()
    }

    /// Descriptors restricted to classes present in the batch, in seen order.
    pub fn batch_descriptor_refs(&self) -> Vec<(ClassId, &[f64])> {
        self.descriptor_refs()
            .into_iter()
            .filter(|(c, _)| self.labels.contains(c))
            .collect()
    }
}

pub const GRAD_TOL: f64 = 1e-5;
pub const GRAD_FLOOR: f64 = 1e-7;

type LossFn = fn(&ModelParams, &[&[f64]], &[ClassId], &[(ClassId, &[f64])]) -> oll_core::Result<LossOutput>;

pub fn loss_fn(strategy: Strategy) -> LossFn {
    match strategy {
        Strategy::Sit => sit_loss,
        Strategy::Ait => ait_loss,
    }
}

pub fn check_parameter_grads(p: &Problem, strategy: Strategy) {
    let f = loss_fn(strategy);
    let images = p.image_refs();
    let descs = p.descriptor_refs();
    let out = f(&p.model, &images, &p.labels, &descs).unwrap();
    let analytic = out.param_grads.flatten();

    let mut probe = p.model.clone();
    let flat = probe.flatten_trainable();
    let numeric = finite_diff_grad(
        |theta| {
            probe.set_trainable(theta)?;
            Ok(f(&probe, &images, &p.labels, &descs)?.loss)
        },
        &flat,
        FD_STEP,
    )
    .unwrap();
    let err = relative_error(&analytic, &numeric, GRAD_FLOOR);
    assert!(err <= GRAD_TOL, "{strategy:?} parameter gradient error {err:e}");
}

/// Gradients with respect to the normalized features, against finite
/// differences of an independent loss written directly on features.
pub fn check_feature_grads(p: &Problem, strategy: Strategy) {
    let images = p.image_refs();
    let descs = p.descriptor_refs();
    let out = loss_fn(strategy)(&p.model, &images, &p.labels, &descs).unwrap();
    let tau = p.model.temperature();
    let d = p.model.config.d_embed;

    let v: Vec<Vec<f64>> = images.iter().map(|x| p.model.encode_image(x).unwrap()).collect();
    let candidates: Vec<_> = match strategy {
        Strategy::Sit => p.batch_descriptor_refs(),
        Strategy::Ait => descs.clone(),
    };
    assert_eq!(out.classes, candidates.iter().map(|c| c.0).collect::<Vec<_>>());
    let t: Vec<Vec<f64>> = candidates.iter().map(|(_, e)| p.model.encode_class(e).unwrap()).collect();
    let cols: Vec<usize> = p
        .labels
        .iter()
        .map(|y| candidates.iter().position(|(c, _)| c == y).unwrap())
        .collect();

    let reference = oracle_loss(&v, &t, &cols, tau);
    assert!((reference - out.loss).abs() <= 1e-12 * reference.abs().max(1.0));

    let flat_v: Vec<f64> = v.concat();
    let num_v = finite_diff_grad(
        |x| Ok(oracle_loss(&x.chunks(d).map(<[f64]>::to_vec).collect::<Vec<_>>(), &t, &cols, tau)),
        &flat_v,
        FD_STEP,
    )
    .unwrap();
    let err = relative_error(out.image_feature_grads.as_slice(), &num_v, GRAD_FLOOR);
    assert!(err <= GRAD_TOL, "{strategy:?} image feature gradient error {err:e}");

    let flat_t: Vec<f64> = t.concat();
    let num_t = finite_diff_grad(
        |x| Ok(oracle_loss(&v, &x.chunks(d).map(<[f64]>::to_vec).collect::<Vec<_>>(), &cols, tau)),
        &flat_t,
        FD_STEP,
    )
    .unwrap();
    let analytic_t: Vec<f64> = out
        .text_feature_grads
        .iter()
        .flat_map(|g| g.positive.iter().zip(&g.negative).map(|(a, b)| a + b).collect::<Vec<_>>())
        .collect();
    let err = relative_error(&analytic_t, &num_t, GRAD_FLOOR);
    assert!(err <= GRAD_TOL, "{strategy:?} text feature gradient error {err:e}");

    for (i, &y) in cols.iter().enumerate() {
        let z = out.logits.row(i);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = z.iter().map(|zj| (zj - m).exp()).sum();
        for (j, zj) in z.iter().enumerate() {
            let want = ((zj - m).exp() / s - f64::from(u8::from(j == y))) / cols.len() as f64;
            assert!((out.logit_grads.get(i, j) - want).abs() <= 1e-12);
        }
    }
}

/// Encoder backward against finite differences of `<g, feature(x)>` for a
/// random cotangent `g`.
pub fn check_encoders(p: &Problem, seed: u64) {
    let mut rng = SeededRng::new(seed ^ 0xABCD);
    let scale = p.model.lora_scale();
    for path in [EncoderPath::Image, EncoderPath::Text] {
        let input = match path {
            EncoderPath::Image => p.images[0].clone(),
            EncoderPath::Text => p.descriptors[0].1.clone(),
        };
        let g = rng.gaussian_vec(p.model.config.d_embed, 1.0);
        let trace = p.model.trace(path, &input).unwrap();
        let enc = p.model.encoder(path);
        let pet = enc.pet.as_ref().expect("PET enabled");
        let mut grad = PetGrad {
            down: Matrix::zeros(pet.down.rows(), pet.down.cols()),
            up: Matrix::zeros(pet.up.rows(), pet.up.cols()),
        };
        enc.backward(&trace, &g, scale, &mut grad).unwrap();
        let analytic: Vec<f64> = grad.down.as_slice().iter().chain(grad.up.as_slice()).copied().collect();

        let flat: Vec<f64> = pet.down.as_slice().iter().chain(pet.up.as_slice()).copied().collect();
        let split = pet.down.len();
        let numeric = finite_diff_grad(
            |theta| {
                let mut e = enc.clone();
                let pe = e.pet.as_mut().unwrap();
                pe.down.as_mut_slice().copy_from_slice(&theta[..split]);
                pe.up.as_mut_slice().copy_from_slice(&theta[split..]);
                let h = e.forward(&input, scale)?.feature;
                Ok(h.iter().zip(&g).map(|(a, b)| a * b).sum())
            },
            &flat,
            FD_STEP,
        )
        .unwrap();
        let err = relative_error(&analytic, &numeric, GRAD_FLOOR);
        assert!(err <= GRAD_TOL, "{path:?} encoder gradient error {err:e}");
    }
}
