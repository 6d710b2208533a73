//! Acceptance gate: one line per criterion, non-zero exit if any fails.
//!
//! Pass criterion numbers as arguments to run a subset. `MNIST_DIR` may
//! point at the standard 60k/10k MNIST IDX files for the format check.

mod common;

use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use common::{dense_gradient, loop_full, loop_pool, loop_valid, random_grid, random_instance};
use regen_snn::checkpoint;
use regen_snn::config::{self, RunConfig};
use regen_snn::data::{self, parse_cifar10, parse_idx_images, parse_idx_labels, Dataset, Image, CIFAR_RECORD};
use regen_snn::lif::{LifParams, LifPopulation};
use regen_snn::metrics::Sparsity;
use regen_snn::raster::{poisson_encode, spike_probability};
use regen_snn::regen::{conv_ae_gradient, delta_hidden, delta_output, instant_error};
use regen_snn::rng::RngStream;
use regen_snn::tensor::{avg_pool, conv2d_full, conv2d_valid, Shape3};
use regen_snn::trainer::{probe_sparsity, TrainConfig, Trainer};
use regen_snn::Error;

type Outcome = Result<String, String>;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_rel(got: &[f64], want: &[f64]) -> f64 {
    got.iter()
        .zip(want)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1.0))
        .fold(0.0, f64::max)
}

fn c1_convolution() -> Outcome {
    let mut rng = RngStream::new(0xc0111);
    let mut worst: f64 = 0.0;
    let n = 1200;
    for _ in 0..n {
        let (rows, cols) = (1 + rng.below(12), 1 + rng.below(12));
        let (kh, kw) = (1 + rng.below(rows.min(5)), 1 + rng.below(cols.min(5)));
        let x = random_grid(&mut rng, rows, cols);
        let k = random_grid(&mut rng, kh, kw);
        let v = conv2d_valid(&x, &k).map_err(|e| e.to_string())?;
        let want = loop_valid(&x, &k);
        if v.dims() != want.dims() {
            return Err(format!("valid dims {:?} vs {:?}", v.dims(), want.dims()));
        }
        worst = worst.max(max_rel(v.as_slice(), want.as_slice()));
        let f = conv2d_full(&x, &k);
        let want = loop_full(&x, &k);
        if f.dims() != want.dims() {
            return Err(format!("full dims {:?} vs {:?}", f.dims(), want.dims()));
        }
        worst = worst.max(max_rel(f.as_slice(), want.as_slice()));
        let s = 1 + rng.below(3);
        let (pr, pc) = (s * (1 + rng.below(5)), s * (1 + rng.below(5)));
        let g = random_grid(&mut rng, pr, pc);
        let p = avg_pool(&g, s).map_err(|e| e.to_string())?;
        worst = worst.max(max_rel(p.as_slice(), loop_pool(&g, s).as_slice()));
    }
    check(
        worst <= 1e-6,
        format!("{n} instances each of valid/full/pool, max relative error {worst:.2e} (bound 1e-6)"),
    )
}

fn c2_learning_core() -> Outcome {
    let p = LifParams::default();
    let mut rng = RngStream::new(0x1ea2);
    let n = 150;
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let (shape, stack, st) = random_instance(&mut rng);
        let e = instant_error(&st.x, &st.y, &p).map_err(|e| e.to_string())?;
        let dy = delta_output(&e, &st.y).map_err(|e| e.to_string())?;
        let dh = delta_hidden(&dy, shape, &stack, &st.h).map_err(|e| e.to_string())?;
        let g = conv_ae_gradient(&st.x, shape, &dh, &st.s, &dy, &stack).map_err(|e| e.to_string())?;
        let want = dense_gradient(shape, &stack, &st, p.v_th, p.v_res);
        worst = worst.max(max_rel(g.as_slice(), &want));
    }
    check(
        worst <= 1e-6,
        format!("{n} instances (input <= 10x10, kernel <= 4x4), conv form vs unrolled synapses max relative error {worst:.2e} (bound 1e-6)"),
    )
}

/// Steps between successive spikes under constant current `j`.
fn measured_isi(p: LifParams, j: f64) -> Result<Vec<usize>, String> {
    let mut pop = LifPopulation::new(Shape3::new(1, 1, 1), p);
    let mut spikes = [false];
    let mut times = Vec::new();
    for t in 0..2000 {
        pop.step_into(&[j], &mut spikes).map_err(|e| e.to_string())?;
        if spikes[0] {
            times.push(t);
        }
    }
    Ok(times.windows(2).map(|w| w[1] - w[0]).collect())
}

fn c3_lif() -> Outcome {
    let p = LifParams::default();
    let mut worst: f64 = 0.0;
    let currents = [1.5, 1.8, 2.0, 3.0, 5.0, 10.0];
    for &j in &currents {
        let analytic = p.tau_ref + p.tau_rc * ((j - p.v_res) / (j - p.v_th)).ln();
        let isi = measured_isi(p, j)?;
        if isi.is_empty() || isi.iter().any(|&d| d != isi[0]) {
            return Err(format!("J={j}: irregular or missing spikes {isi:?}"));
        }
        let d = (isi[0] as f64 - analytic).abs();
        worst = worst.max(d);
        if d > 1.0 {
            return Err(format!("J={j}: ISI {} steps vs analytic {analytic:.2}", isi[0]));
        }
    }
    let mut conv: f64 = 0.0;
    for &j in &[0.1, 0.5, 0.9, 1.1, 1.19] {
        let mut pop = LifPopulation::new(Shape3::new(1, 1, 1), p);
        let mut s = [false];
        for _ in 0..(10.0 * p.tau_rc) as usize {
            pop.step_into(&[j], &mut s).map_err(|e| e.to_string())?;
            if s[0] {
                return Err(format!("sub-threshold J={j} spiked"));
            }
        }
        conv = conv.max((pop.potentials()[0] - j).abs());
    }
    if conv > 1e-3 {
        return Err(format!("sub-threshold |v-J| after 10 tau = {conv:.2e}"));
    }
    let mut rng = RngStream::new(0x3ef);
    let mut checked = 0usize;
    for _ in 0..50 {
        let params = LifParams {
            tau_ref: rng.uniform() * 6.0,
            ..p
        };
        let mut pop = LifPopulation::new(Shape3::new(1, 4, 4), params);
        let mut spikes = vec![false; 16];
        for _ in 0..200 {
            let held: Vec<bool> = pop.refractory().iter().map(|&r| r > 0).collect();
            let cur: Vec<f64> = (0..16).map(|_| rng.uniform() * 6.0).collect();
            pop.step_into(&cur, &mut spikes).map_err(|e| e.to_string())?;
            for (h, s) in held.iter().zip(&spikes) {
                checked += *h as usize;
                if *h && *s {
                    return Err("spike emitted while refractory".into());
                }
            }
        }
    }
    Ok(format!(
        "ISI within {worst:.2} steps of analytic for J in {currents:?}; sub-threshold |v-J| {conv:.1e} after 10 tau; {checked} refractory steps silent"
    ))
}

fn c4_poisson() -> Outcome {
    let (i_rate, t_ms) = (100.0, 250.0);
    let steps = 250.0;
    // 64 x 160 = 10240 neurons, 40 per intensity.
    let pixels: Vec<u8> = (0..10240).map(|i| (i % 256) as u8).collect();
    let image = Image::new(1, 64, 160, pixels.clone()).map_err(|e| e.to_string())?;
    let raster = poisson_encode(&image, i_rate, t_ms, &mut RngStream::new(0x901)).map_err(|e| e.to_string())?;
    let counts = raster.counts();
    // Binomial check per band of 32 intensity levels (1280 neurons each).
    let mut worst_z: f64 = 0.0;
    for band in 0..8u8 {
        let members: Vec<(f64, f64)> = counts
            .iter()
            .zip(&pixels)
            .filter(|(_, &px)| px / 32 == band)
            .map(|(&c, &px)| (c as f64, spike_probability(px, i_rate)))
            .collect();
        let n = members.len() as f64;
        let mean = members.iter().map(|m| m.0).sum::<f64>() / n;
        let expect = members.iter().map(|m| steps * m.1).sum::<f64>() / n;
        let var = members.iter().map(|m| steps * m.1 * (1.0 - m.1)).sum::<f64>() / n;
        let z = (mean - expect).abs() / (var / n).sqrt();
        if !(z <= 3.0) {
            return Err(format!("band {band}: mean count {mean:.3} vs {expect:.3} ({z:.2} SE)"));
        }
        worst_z = worst_z.max(z);
    }
    // Rate (Hz) against intensity, ordinary least squares.
    let xs: Vec<f64> = pixels.iter().map(|&p| p as f64).collect();
    let ys: Vec<f64> = counts.iter().map(|&c| c as f64 * 1000.0 / t_ms).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let sigma = (rss / (n - 2.0) / sxx).sqrt();
    let want = i_rate / 255.0;
    let dz = (slope - want).abs() / sigma;
    check(
        dz <= 3.0 && worst_z <= 3.0,
        format!(
            "10240 neurons: band means within {worst_z:.2} SE; slope {slope:.5} Hz/level vs {want:.5} ({dz:.2} sigma, sigma {sigma:.5})"
        ),
    )
}

fn mnist_5k() -> Result<(Dataset, Dataset), String> {
    let d = repo().join("data/mnist-5k");
    let train = data::read_idx_dataset(
        d.join("train-images-idx3-ubyte.gz"),
        d.join("train-labels-idx1-ubyte.gz"),
    )
    .map_err(|e| e.to_string())?;
    let test = data::read_idx_dataset(d.join("t10k-images-idx3-ubyte.gz"), d.join("t10k-labels-idx1-ubyte.gz"))
        .map_err(|e| e.to_string())?;
    Ok((train, test))
}

fn c5_layer1_learning() -> Outcome {
    let loaded = config::load(repo().join("configs/p2.toml")).map_err(|e| e.to_string())?;
    let cfg: TrainConfig = loaded.config.train;
    let (train, _) = mnist_5k()?;
    let stack = train.head(500);
    let probe = train.slice(3950, 4000);
    let mut tr = Trainer::new(cfg.clone()).map_err(|e| e.to_string())?;
    let before = tr.measure_reconstruction_error(0, &probe).map_err(|e| e.to_string())?;
    let passes = tr.train_conv_layer(&stack).map_err(|e| e.to_string())?;
    let after = tr.measure_reconstruction_error(0, &probe).map_err(|e| e.to_string())?;
    let (first, last) = (passes[0].potential_loss, passes[passes.len() - 1].potential_loss);
    let drop = 1.0 - after.aggregate / before.aggregate;
    check(
        passes.len() == 3 && last < first && drop >= 0.2,
        format!(
            "{} on 500 images x {} presentations: pass loss {first:.4e} -> {last:.4e}; probe count error {:.4e} -> {:.4e} ({:.1}% drop, need >= 20%)",
            cfg.topology,
            passes.len(),
            before.aggregate,
            after.aggregate,
            100.0 * drop
        ),
    )
}

/// Shared desk-scale run for criteria 6, 7 and 8.
struct Desk {
    layer_errors: Vec<f64>,
    untrained: Vec<Sparsity>,
    trained: Vec<Sparsity>,
    accuracies: Vec<f64>,
    mean: f64,
    test_images: usize,
    topology: String,
    seconds: f64,
}

fn desk() -> &'static Result<Desk, String> {
    static DESK: OnceLock<Result<Desk, String>> = OnceLock::new();
    DESK.get_or_init(|| run_desk().map_err(|e| e.to_string()))
}

fn run_desk() -> regen_snn::Result<Desk> {
    let t0 = Instant::now();
    let run: RunConfig = config::load(repo().join("configs/desk.toml"))?.config;
    let train = run.load_train()?;
    let test = run.load_test()?;
    let probe = test.head(run.train.probe_images);
    let mut tr = Trainer::new(run.train.clone())?;
    let untrained = probe_sparsity(tr.topology(), tr.config(), &probe)?;
    let stack = tr.stack_subset(&train)?;
    tr.train_conv_stack(&stack)?;
    let layers = tr.topology().conv_layers().len();
    let layer_errors = (0..layers)
        .map(|c| tr.measure_reconstruction_error(c, &probe).map(|r| r.aggregate))
        .collect::<regen_snn::Result<Vec<_>>>()?;
    let trained = probe_sparsity(tr.topology(), tr.config(), &probe)?;
    tr.train_readout(&train)?;
    let ev = tr.evaluate(&test, run.eval.passes, run.eval.iterations)?;
    Ok(Desk {
        layer_errors,
        untrained,
        trained,
        mean: ev.mean(),
        accuracies: ev.accuracies,
        test_images: test.len(),
        topology: run.train.topology,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

fn c6_layer_trend() -> Outcome {
    let d = desk().as_ref().map_err(Clone::clone)?;
    let (l1, l2) = (d.layer_errors[0], d.layer_errors[1]);
    check(
        l2 <= 1.05 * l1,
        format!("desk run: probe count error layer 1 {l1:.4e}, layer 2 {l2:.4e} (need layer 2 <= 1.05 x layer 1)"),
    )
}

fn c7_classification() -> Outcome {
    let d = desk().as_ref().map_err(Clone::clone)?;
    let accs: Vec<String> = d.accuracies.iter().map(|a| format!("{a:.4}")).collect();
    check(
        d.mean >= 0.85,
        format!(
            "{} on {} test images: mean accuracy {:.4} (need >= 0.85), iterations [{}], desk run {:.0} s",
            d.topology,
            d.test_images,
            d.mean,
            accs.join(", "),
            d.seconds
        ),
    )
}

fn c8_sparsity() -> Outcome {
    let d = desk().as_ref().map_err(Clone::clone)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (c, (u, t)) in d.untrained.iter().zip(&d.trained).enumerate() {
        ok &= t.active_fraction < 0.5 && t.active_fraction < u.active_fraction;
        parts.push(format!(
            "conv {}: trained {:.3} vs untrained {:.3}",
            c + 1,
            t.active_fraction,
            u.active_fraction
        ));
    }
    check(
        ok,
        format!(
            "active fraction per window, {} (need trained < 0.5 and < untrained)",
            parts.join("; ")
        ),
    )
}

fn small_run(train: &Dataset) -> regen_snn::Result<Trainer> {
    let cfg = TrainConfig {
        topology: "28x28-4c5-2a-10o".into(),
        seed: 11,
        t_ms: 60.0,
        stack_images: Some(30),
        labeled: 40,
        probe_images: 5,
        ..TrainConfig::default()
    };
    let mut tr = Trainer::new(cfg)?;
    let stack = tr.stack_subset(train)?;
    tr.train_conv_stack(&stack)?;
    tr.train_readout(train)?;
    Ok(tr)
}

fn c9_determinism() -> Outcome {
    let (train, test) = mnist_5k()?;
    let train = train.head(200);
    let test = test.head(30);
    let mut a = small_run(&train).map_err(|e| e.to_string())?;
    let mut b = small_run(&train).map_err(|e| e.to_string())?;
    let ea = a.evaluate(&test, 2, 2).map_err(|e| e.to_string())?;
    let eb = b.evaluate(&test, 2, 2).map_err(|e| e.to_string())?;
    let (csv_a, csv_b) = (a.log().to_csv(false), b.log().to_csv(false));
    if csv_a != csv_b {
        return Err("metrics CSV differs between identical runs".into());
    }
    let bytes_a = checkpoint::encode(&a.checkpoint()).map_err(|e| e.to_string())?;
    let bytes_b = checkpoint::encode(&b.checkpoint()).map_err(|e| e.to_string())?;
    if bytes_a != bytes_b {
        return Err("checkpoints differ between identical runs".into());
    }
    if ea != eb {
        return Err("evaluations differ between identical runs".into());
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("ck.bin");
    checkpoint::save(&a.checkpoint(), &path).map_err(|e| e.to_string())?;
    let back = checkpoint::load(&path).map_err(|e| e.to_string())?;
    if checkpoint::encode(&back).map_err(|e| e.to_string())? != bytes_a {
        return Err("checkpoint re-encode differs".into());
    }
    let mut restored = Trainer::from_checkpoint(back).map_err(|e| e.to_string())?;
    let er = restored.evaluate(&test, 2, 2).map_err(|e| e.to_string())?;
    check(
        er.predictions == ea.predictions && er.accuracies == ea.accuracies,
        format!(
            "two identical runs: {}-byte metrics CSV and {}-byte checkpoint identical; {} decisions preserved across save/load",
            csv_a.len(),
            bytes_a.len(),
            ea.predictions.iter().map(Vec::len).sum::<usize>()
        ),
    )
}

fn idx_images_bytes(n: usize, rows: usize, cols: usize, rng: &mut RngStream) -> Vec<u8> {
    let mut b = Vec::with_capacity(16 + n * rows * cols);
    for v in [0x803u32, n as u32, rows as u32, cols as u32] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    b.extend((0..n * rows * cols).map(|_| rng.below(256) as u8));
    b
}

fn idx_labels_bytes(n: usize, rng: &mut RngStream) -> Vec<u8> {
    let mut b = Vec::with_capacity(8 + n);
    for v in [0x801u32, n as u32] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    b.extend((0..n).map(|_| rng.below(10) as u8));
    b
}

fn gzip(bytes: &[u8]) -> Vec<u8> {
    let mut e = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
    e.write_all(bytes).expect("in-memory write");
    e.finish().expect("in-memory gzip")
}

/// Standard-size MNIST: the real files when `MNIST_DIR` is set, otherwise
/// synthetic files of the same counts and geometry plus the bundled subset.
fn full_size_counts() -> Outcome {
    if let Ok(dir) = std::env::var("MNIST_DIR") {
        let d = PathBuf::from(dir);
        let find = |stem: &str| {
            let gz = d.join(format!("{stem}.gz"));
            if gz.exists() {
                gz
            } else {
                d.join(stem)
            }
        };
        let train = data::read_idx_dataset(find("train-images-idx3-ubyte"), find("train-labels-idx1-ubyte"))
            .map_err(|e| e.to_string())?;
        let test = data::read_idx_dataset(find("t10k-images-idx3-ubyte"), find("t10k-labels-idx1-ubyte"))
            .map_err(|e| e.to_string())?;
        return check(
            train.len() == 60000 && test.len() == 10000,
            format!("MNIST_DIR: {} train / {} test", train.len(), test.len()),
        );
    }
    let (train, test) = mnist_5k()?;
    if train.len() != 4000 || test.len() != 1000 || train.shape() != Some(Shape3::new(1, 28, 28)) {
        return Err(format!("bundled subset: {} / {}", train.len(), test.len()));
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = RngStream::new(0x60000);
    let mut counts = Vec::new();
    for (n, name) in [(60000, "train"), (10000, "t10k")] {
        let ip = dir.path().join(format!("{name}-images-idx3-ubyte.gz"));
        let lp = dir.path().join(format!("{name}-labels-idx1-ubyte.gz"));
        std::fs::write(&ip, gzip(&idx_images_bytes(n, 28, 28, &mut rng))).map_err(|e| e.to_string())?;
        std::fs::write(&lp, gzip(&idx_labels_bytes(n, &mut rng))).map_err(|e| e.to_string())?;
        counts.push(data::read_idx_dataset(&ip, &lp).map_err(|e| e.to_string())?.len());
    }
    check(
        counts == [60000, 10000],
        format!(
            "MNIST_DIR unset: bundled subset 4000/1000 read, standard-size synthetic IDX read as {}/{}",
            counts[0], counts[1]
        ),
    )
}

#[derive(Clone, Copy, PartialEq)]
enum Expect {
    Error,
    Either,
}

fn corrupt(base: &[u8], case: usize, rng: &mut RngStream, header: usize) -> (Vec<u8>, Expect) {
    let mut b = base.to_vec();
    match case % 6 {
        0 => {
            let n = rng.below(b.len());
            b.truncate(n);
            (b, Expect::Error)
        }
        1 => {
            let extra = 1 + rng.below(64);
            b.extend((0..extra).map(|_| rng.below(256) as u8));
            (b, Expect::Error)
        }
        2 => {
            let i = rng.below(header.min(b.len()));
            b[i] ^= 1 << rng.below(8);
            (b, Expect::Either)
        }
        3 => {
            for _ in 0..1 + rng.below(8) {
                let i = rng.below(b.len());
                b[i] = rng.below(256) as u8;
            }
            (b, Expect::Either)
        }
        4 => (
            (0..rng.below(64)).map(|_| rng.below(256) as u8).collect(),
            Expect::Error,
        ),
        _ => {
            let i = 4 * rng.below(header / 4);
            b[i..i + 4].copy_from_slice(&(rng.below(u32::MAX as usize) as u32 | 0x1000_0000).to_be_bytes());
            (b, Expect::Error)
        }
    }
}

fn typed(r: &regen_snn::Result<usize>) -> bool {
    matches!(r, Ok(_) | Err(Error::Format { .. }) | Err(Error::Shape(_)))
}

fn c10_formats() -> Outcome {
    let counts = full_size_counts()?;
    let mut rng = RngStream::new(0xbad);
    let path = Path::new("fixture");
    let images = idx_images_bytes(6, 7, 5, &mut rng);
    let labels = idx_labels_bytes(6, &mut rng);
    let mut cifar = Vec::new();
    for _ in 0..3 {
        cifar.push(rng.below(10) as u8);
        cifar.extend((0..CIFAR_RECORD - 1).map(|_| rng.below(256) as u8));
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (mut errors, mut accepted, mut cases) = (0, 0, 0);
    for case in 0..500 {
        let kind = case % 5;
        let (bytes, expect, parse): (Vec<u8>, Expect, Box<dyn Fn(&[u8]) -> regen_snn::Result<usize>>) = match kind {
            0 => {
                let (b, e) = corrupt(&images, case / 5, &mut rng, 16);
                (b, e, Box::new(|b: &[u8]| parse_idx_images(b, path).map(|v| v.len())))
            }
            1 => {
                let (b, e) = corrupt(&labels, case / 5, &mut rng, 8);
                (b, e, Box::new(|b: &[u8]| parse_idx_labels(b, path).map(|v| v.len())))
            }
            2 => {
                // CIFAR has no header; the label byte of a random record
                // stands in for it.
                let (b, e) = corrupt(&cifar, case / 5, &mut rng, 4);
                let e = if (case / 5) % 6 == 5 { Expect::Either } else { e };
                (b, e, Box::new(|b: &[u8]| parse_cifar10(b, path).map(|(v, _)| v.len())))
            }
            3 => {
                let mut gz = gzip(&images);
                let (b, e) = if rng.bernoulli(0.5) {
                    let n = 1 + rng.below(gz.len() - 1);
                    gz.truncate(n);
                    (gz, Expect::Error)
                } else {
                    let i = rng.below(gz.len());
                    gz[i] ^= 0xff;
                    (gz, Expect::Either)
                };
                let p = dir.path().join(format!("case{case}.gz"));
                std::fs::write(&p, &b).map_err(|e| e.to_string())?;
                (
                    b,
                    e,
                    Box::new(move |_: &[u8]| data::read_idx_images(&p).map(|v| v.len())),
                )
            }
            _ => {
                let mut bad = labels.clone();
                let i = 8 + rng.below(6);
                bad[i] = 10 + rng.below(246) as u8;
                let (b, e) = if rng.bernoulli(0.5) {
                    (bad, Expect::Error)
                } else {
                    let mut c = cifar.clone();
                    c[CIFAR_RECORD * rng.below(3)] = 10 + rng.below(246) as u8;
                    (c, Expect::Error)
                };
                let is_cifar = b.len() % CIFAR_RECORD == 0;
                (
                    b,
                    e,
                    Box::new(move |b: &[u8]| {
                        if is_cifar {
                            parse_cifar10(b, path).map(|(v, _)| v.len())
                        } else {
                            parse_idx_labels(b, path).map(|v| v.len())
                        }
                    }),
                )
            }
        };
        cases += 1;
        let r = panic::catch_unwind(AssertUnwindSafe(|| parse(&bytes)));
        let r = r.map_err(|_| format!("case {case}: parser panicked"))?;
        if !typed(&r) {
            return Err(format!("case {case}: untyped error {r:?}"));
        }
        if expect == Expect::Error && r.is_ok() {
            return Err(format!("case {case}: corrupted input accepted"));
        }
        if r.is_ok() {
            accepted += 1;
        } else {
            errors += 1;
        }
    }
    Ok(format!("{counts}; corruption corpus {cases} cases: {errors} typed errors, {accepted} benign (payload-only) accepted, 0 panics"))
}

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "convolution oracles", c1_convolution),
        (2, "learning-core oracle", c2_learning_core),
        (3, "LIF analytics", c3_lif),
        (4, "Poisson statistics", c4_poisson),
        (5, "layer-1 learning improves reconstruction", c5_layer1_learning),
        (6, "layer trend", c6_layer_trend),
        (7, "desk-scale classification", c7_classification),
        (8, "sparsity", c8_sparsity),
        (9, "determinism and persistence", c9_determinism),
        (10, "format robustness", c10_formats),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = Vec::new();
    for (n, name, f) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let r = panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match r {
            Ok(d) => println!("criterion {n:>2} PASS  {name}: {d} [{secs:.1} s]"),
            Err(d) => {
                println!("criterion {n:>2} FAIL  {name}: {d} [{secs:.1} s]");
                failed.push(n);
            }
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
