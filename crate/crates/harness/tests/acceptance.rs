//! Acceptance suite. Every criterion runs in sequence inside one test so the
//! timed ones do not share the CPU with other tests, and each prints a single
//! PASS/FAIL line straight to stderr (visible even when output is captured).

use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rhino_core::encoder::{hyperedge_to_node, node_to_hyperedge, EdgeIndex, EncoderConfig, GumbelNoise};
use rhino_core::generator::{
    generate, posterior, rhino_loss, GeneratorConfig, GeneratorInputs, LatentSource, LossWeights, PosteriorParams,
};
use rhino_core::giraffe::{self, DgcnConfig, DiffusionSupports, GiraffeConfig};
use rhino_core::graph::{expand_graph, AgentGraph, BehaviorCorrelation};
use rhino_core::rhino::{self, RhinoConfig, Sampling, Variant};
use rhino_core::scenario::{Minibatch, ScenarioBatch};
use rhino_core::selection::{affinity, greedy_hyperedge, group_objective, infer_hyperedges, select_groups, AffinityMatrix, SelectionMode};
use rhino_harness::ablation::run_ablation;
use rhino_harness::config::Settings;
use rhino_harness::dataset::{select, split_indices};
use rhino_harness::eval::{evaluate_rhino, rmse};
use rhino_harness::synth::{synth_records, target_set, SynthConfig};
use rhino_harness::train::{train_giraffe, train_rhino};
use rhino_harness::window::{window_scenarios, WindowConfig};
use rhino_kernel::nn::{gru_forward, gumbel_softmax_sample, kl_diag_gaussians, mlp_forward, Activation};
use rhino_kernel::{check_gradients, DenseArray, Init, KernelError, ParameterStore, SeededRng, Tape, Var};

/// Desk-scale configuration for the overfit run: the default widths do not
/// fit the time budget on a single core.
const OVERFIT_CONFIG: &str = "
hidden = 32
gru_hidden = 32
dz = 16
lr = 0.003
decay = 0.6
epoch_steps = 600
steps = 2000
batch_size = 16
scales = 2,3
categories = 2
passes = 1
k_samples = 10
clip = 10
seed = 1
";

/// Variant comparison on a held-out split. Single runs swing by more than the
/// gaps between variants, so each variant is averaged over `ABLATION_SEEDS`.
/// At width 16 the forecaster is too weak for its per-mode forecasts to help.
const ABLATION_CONFIG: &str = "
hidden = 32
gru_hidden = 16
dz = 4
lr = 0.003
decay = 0.6
epoch_steps = 500
steps = 1500
batch_size = 8
scales = 2,3
categories = 2
passes = 1
k_samples = 10
clip = 10
seed = 2
split_seed = 2
";

const ABLATION_SEEDS: [u64; 3] = [2, 3, 4];

/// Small enough to run the command-line pipeline twice in seconds.
const PIPELINE_CONFIG: &str = "
hidden = 8
dz = 2
steps = 15
batch_size = 4
scales = 2
categories = 2
passes = 1
k_samples = 3
seed = 5
";

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn report(id: usize, name: &str, o: &Outcome) {
    let mark = if o.passed { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "[acceptance] {mark} {id}. {name}: {}", o.detail);
}

type KResult<T> = rhino_kernel::Result<T>;

fn k<T>(r: rhino_core::Result<T>) -> KResult<T> {
    r.map_err(|e| KernelError::Parameter(e.to_string()))
}

fn weighted_sum(t: &mut Tape, v: Var) -> KResult<Var> {
    let shape = t.shape(v).to_vec();
    let w = DenseArray::from_fn(&shape, |idx| {
        let flat: usize = idx.iter().fold(0, |acc, &i| acc * 7 + i + 1);
        ((flat as f64) * 0.37).sin() + 1.3
    });
    let w = t.constant(w);
    let m = t.mul(v, w)?;
    Ok(t.sum(m))
}

fn with_inputs(entries: &[(&str, &[usize])], seed: u64) -> ParameterStore {
    let mut rng = SeededRng::new(seed);
    let mut store = ParameterStore::new(seed);
    for (name, shape) in entries {
        store.insert(name, rng.normal_array(shape));
    }
    store
}

fn input(t: &mut Tape, s: &mut ParameterStore, name: &str) -> KResult<Var> {
    let shape = s.get(name).expect("seeded").shape().to_vec();
    t.param(s, name, &shape, Init::Zeros)
}

fn frozen_noise(prefix: &str, scale: usize, members: &[usize]) -> Vec<f64> {
    let mut key = prefix.bytes().fold(scale as u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
    for m in members {
        key = key.wrapping_mul(131).wrapping_add(*m as u64);
    }
    let mut rng = SeededRng::new(key);
    (0..2).map(|_| rng.gumbel()).collect()
}

/// Agents in three lanes with distinct speeds and a mild drift.
fn drifting_scenario(n: usize, t: usize, f: usize, seed: u64) -> ScenarioBatch {
    let mut rng = SeededRng::new(seed);
    let lane: Vec<f64> = (0..n).map(|i| (i % 3) as f64 * 3.75 - 3.75).collect();
    let speed: Vec<f64> = (0..n).map(|_| rng.uniform(8.0, 14.0)).collect();
    let drift: Vec<f64> = (0..n).map(|_| rng.uniform(-0.4, 0.4)).collect();
    let start: Vec<f64> = (0..n).map(|i| i as f64 * 9.0 - 12.0).collect();
    let pos = |i: usize, s: f64| [start[i] + speed[i] * 0.1 * s, lane[i] + drift[i] * 0.1 * s];
    let history = DenseArray::from_fn(&[t, n, 4], |ix| {
        let s = ix[0] as f64 - (t - 1) as f64;
        match ix[2] {
            0 | 1 => pos(ix[1], s)[ix[2]],
            2 => speed[ix[1]],
            _ => drift[ix[1]],
        }
    });
    let future = DenseArray::from_fn(&[f, n, 2], |ix| pos(ix[1], ix[0] as f64 + 1.0)[ix[2]]);
    ScenarioBatch::new(history, future, 1.5).unwrap()
}

fn gradient_suite() -> Outcome {
    const T: usize = 4;
    const F: usize = 3;
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    let mut run = |label: &str, store: &mut ParameterStore, f: &mut dyn FnMut(&mut Tape, &mut ParameterStore) -> KResult<Var>| {
        let r = check_gradients(|t: &mut Tape, s: &mut ParameterStore| f(t, s), store, 1e-5, 1e-4).unwrap();
        worst = worst.max(r.max_rel_err());
        if !r.passed() {
            failed.push(label.to_string());
        }
    };

    let mut s = with_inputs(&[("x", &[4, 3])], 1);
    run("mlp", &mut s, &mut |t, s| {
        let x = input(t, s, "x")?;
        let y = mlp_forward(t, s, "mlp", x, &[3, 6, 2], Activation::Tanh)?;
        weighted_sum(t, y)
    });

    let mut s = with_inputs(&[("seq", &[5, 2, 3])], 2);
    run("gru", &mut s, &mut |t, s| {
        let x = input(t, s, "seq")?;
        let h = gru_forward(t, s, "gru", x, 4)?;
        weighted_sum(t, h)
    });

    let dgcn = DgcnConfig {
        cheb_order: 2,
        layers: 2,
        hidden: 3,
    };
    let adj = DenseArray::from_fn(&[4, 4], |ix| if ix[0] == ix[1] { 1.0 } else { 0.2 + 0.1 * ((ix[0] * 4 + ix[1]) % 5) as f64 });
    let supports = DiffusionSupports::new(&adj, 2).unwrap();
    let mut s = with_inputs(&[("x", &[4, 5])], 3);
    run("dgcn", &mut s, &mut |t, s| {
        let x = input(t, s, "x")?;
        let h = k(giraffe::dgcn_stack(t, s, "dgcn", x, &supports, &dgcn))?;
        weighted_sum(t, h)
    });

    let enc = EncoderConfig {
        scales: vec![2, 3],
        d_embed: 3,
        hidden: 4,
        categories: 2,
        passes: 1,
        selection: SelectionMode::Exact,
        activation: Activation::Tanh,
    };
    let edges = EdgeIndex::new(5, vec![vec![0, 1, 2], vec![1, 3], vec![2, 3, 4]]);
    let mut s = with_inputs(&[("v", &[5, 3])], 4);
    run("message passing", &mut s, &mut |t, s| {
        let v = input(t, s, "v")?;
        let mut noise = GumbelNoise::Provided(&frozen_noise);
        let (u, _) = k(node_to_hyperedge(t, s, "mp", &enc, v, &edges, &mut noise, 1, 0.7))?;
        let out = k(hyperedge_to_node(t, s, "mp", &enc, v, u, &edges))?;
        weighted_sum(t, out)
    });

    let gen = GeneratorConfig {
        t: T,
        f: F,
        dz: 2,
        hidden: 4,
        gru_hidden: 3,
        input_scale: 0.1,
        out_scale: 1.0,
        activation: Activation::Tanh,
    };
    let mut s = with_inputs(&[("vf", &[3, 4]), ("vt", &[3, 4])], 5);
    run("posterior", &mut s, &mut |t, s| {
        let vf = input(t, s, "vf")?;
        let vt = input(t, s, "vt")?;
        let p = k(posterior(t, s, "post", &gen, vf, vt))?;
        let a = weighted_sum(t, p.mu)?;
        let b = weighted_sum(t, p.sigma)?;
        t.add(a, b)
    });

    let one = drifting_scenario(3, T, F, 6);
    let batch = Minibatch::new(&[&one]).unwrap();
    let inputs = GeneratorInputs {
        history: batch.history.clone(),
        cv_future: batch.cv_future(),
        cv_past: batch.cv_past(),
    };
    let mut s = with_inputs(&[("vp", &[6, 4])], 7);
    run("residual generator", &mut s, &mut |t, s| {
        let vp = input(t, s, "vp")?;
        let g = k(generate(t, s, "gen", &gen, vp, &inputs))?;
        let a = weighted_sum(t, g.future)?;
        let b = weighted_sum(t, g.past)?;
        t.add(a, b)
    });

    let gcfg = GiraffeConfig {
        t: T,
        f: F,
        dgcn: dgcn.clone(),
        intent_hidden: 4,
        dec_hidden: 3,
        activation: Activation::Tanh,
        ..GiraffeConfig::default()
    };
    let scenes = [drifting_scenario(3, T, F, 8), drifting_scenario(4, T, F, 9)];
    let batch = Minibatch::new(&[&scenes[0], &scenes[1]]).unwrap();
    let hf = giraffe::hf_target(&mut ParameterStore::new(10), &gcfg, &batch).unwrap();
    let mut s = ParameterStore::new(11);
    run("forecaster loss stack", &mut s, &mut |t, s| {
        let out = k(giraffe::forward(t, s, &gcfg, &batch))?;
        Ok(k(giraffe::batch_loss(t, &gcfg, &out, &batch, &hf))?.total)
    });

    let truth_future = SeededRng::new(12).normal_array(&[5, F * 2]);
    let truth_past = SeededRng::new(13).normal_array(&[5, T * 2]);
    let mut s = with_inputs(&[("fut", &[15, F * 2]), ("past", &[15, T * 2]), ("mu", &[5, 2])], 14);
    s.insert("sigma", SeededRng::new(15).uniform_array(&[5, 2], 0.3, 1.5));
    let weights = LossWeights::default();
    run("generation loss stack", &mut s, &mut |t, s| {
        let fut = input(t, s, "fut")?;
        let past = input(t, s, "past")?;
        let p = PosteriorParams {
            mu: input(t, s, "mu")?,
            sigma: input(t, s, "sigma")?,
        };
        Ok(k(rhino_loss(t, fut, past, Some(&p), &truth_future, &truth_past, &[0, 0, 1, 1, 1], &weights))?.total)
    });

    let prelim = rhino::preliminary(&mut ParameterStore::new(16), &gcfg, &batch).unwrap();
    let rcfg = RhinoConfig {
        encoder: enc.clone(),
        generator: gen.clone(),
        weights: LossWeights {
            k_samples: 3,
            ..LossWeights::default()
        },
        variant: Variant::Full,
    };
    let mut s = ParameterStore::new(17);
    run("relational training objective", &mut s, &mut |t, s| {
        let mut rng = SeededRng::new(18);
        let mut sampling = Sampling {
            noise: GumbelNoise::Provided(&frozen_noise),
            tau: 0.8,
            latent: LatentSource::Posterior,
            k: rcfg.train_samples(),
            rng: &mut rng,
        };
        let out = k(rhino::forward(t, s, &rcfg, &batch, &prelim, &mut sampling))?;
        Ok(k(rhino::batch_loss(t, &rcfg, &out, &batch))?.total)
    });

    let secs = start.elapsed().as_secs_f64();
    let passed = failed.is_empty() && worst < 1e-4 && secs < 60.0;
    outcome(
        passed,
        format!("9 checks, max relative error {worst:.2e} (< 1e-4), {secs:.1} s (< 60 s), failing: {failed:?}"),
    )
}

fn random_affinity(n: usize, rng: &mut SeededRng) -> AffinityMatrix {
    let mut a = DenseArray::identity(n);
    for i in 0..n {
        for j in 0..i {
            let v = rng.uniform(-1.0, 1.0);
            a.set(&[i, j], v);
            a.set(&[j, i], v);
        }
    }
    AffinityMatrix::new(a).unwrap()
}

fn enumerate_best(aff: &AffinityMatrix, seed: usize, j: usize) -> Vec<usize> {
    let n = aff.n();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != j || mask & (1 << seed) == 0 {
            continue;
        }
        let set: Vec<usize> = (0..n).filter(|v| mask & (1 << v) != 0).collect();
        let value: f64 = set.iter().flat_map(|&a| set.iter().map(move |&b| (a, b))).map(|(a, b)| aff.get(a, b).abs()).sum();
        if best.as_ref().is_none_or(|(bv, bs)| value > *bv || (value == *bv && set < *bs)) {
            best = Some((value, set));
        }
    }
    best.unwrap().1
}

fn hyperedge_oracle() -> Outcome {
    let (mut mismatches, mut worst_ratio) = (0, f64::INFINITY);
    for instance in 0..100u64 {
        let mut rng = SeededRng::new(5000 + instance);
        let n = 4 + (instance % 5) as usize;
        let j = 2 + ((instance / 5) % 3) as usize;
        let aff = random_affinity(n, &mut rng);
        let exact = select_groups(&aff, j, SelectionMode::Exact).unwrap();
        for seed in 0..n {
            if exact[seed] != enumerate_best(&aff, seed, j) {
                mismatches += 1;
            }
            let g = greedy_hyperedge(&aff, seed, j);
            worst_ratio = worst_ratio.min(group_objective(&aff, &g) / group_objective(&aff, &exact[seed]));
        }
    }
    outcome(
        mismatches == 0 && worst_ratio >= 0.8,
        format!("100 matrices, {mismatches} exact/enumeration mismatches, worst greedy ratio {worst_ratio:.3} (>= 0.8)"),
    )
}

fn run_property<S: Strategy>(name: &str, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let mut runner = TestRunner::new(PropConfig {
        cases: 1000,
        failure_persistence: None,
        ..PropConfig::default()
    });
    runner.run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

fn property_suite() -> Outcome {
    let mut failures = Vec::new();
    let kron = run_property(
        "kronecker",
        (1usize..6, 1usize..4, prop::collection::vec(0.0..3.0f64, 36), prop::collection::vec(0.0..=1.0f64, 10)),
        |(n, m, a_vals, l_vals)| {
            let adj = DenseArray::from_fn(&[n, n], |ix| if ix[0] == ix[1] { 1.0 } else { a_vals[ix[0] * 6 + ix[1]] });
            let mut corr = DenseArray::zeros(&[m, m]);
            let mut next = l_vals.iter().cycle();
            for a in 0..m {
                for b in a..m {
                    let v = if a == b { 1.0 } else { *next.next().unwrap() };
                    corr.set(&[a, b], v);
                    corr.set(&[b, a], v);
                }
            }
            let g = AgentGraph::new(DenseArray::zeros(&[n, 1]), adj.clone()).unwrap();
            let c = BehaviorCorrelation::new(corr.clone()).unwrap();
            let b = expand_graph(&g, &c, &DenseArray::zeros(&[n, m, 1])).unwrap();
            for r in 0..n * m {
                for col in 0..n * m {
                    let expected = adj.get(&[r / m, col / m]) * corr.get(&[r % m, col % m]);
                    prop_assert_eq!(b.adjacency().get(&[r, col]), expected);
                }
            }
            Ok(())
        },
    );
    let columns = run_property("incidence", (2usize..9, 1usize..5, any::<u64>(), any::<bool>()), |(n, d, seed, greedy)| {
        let q = SeededRng::new(seed).normal_array(&[n, d]).map(|v| if v == 0.0 { 1e-3 } else { v });
        let aff = affinity(&q).unwrap();
        let sizes: Vec<usize> = (2..=n.min(5)).collect();
        let mode = if greedy { SelectionMode::Greedy } else { SelectionMode::Exact };
        let hg = infer_hyperedges(&aff, &sizes, mode).unwrap();
        for s in &hg.scales {
            let inc = s.hypergraph.incidence();
            for col in 0..s.hypergraph.n_hyperedges() {
                let sum: f64 = (0..n).map(|v| inc.get(&[v, col])).sum();
                let expected = if s.scale >= 1 { s.group_size } else { 2 };
                prop_assert_eq!(sum, expected as f64);
            }
        }
        Ok(())
    });
    let simplex = run_property(
        "simplex",
        (1usize..7, prop::collection::vec(-50.0..50.0f64, 6), 0.01..100.0f64, any::<u64>()),
        |(cols, logits, tau, seed)| {
            let mut t = Tape::new();
            let x = t.constant(DenseArray::new(vec![1, cols], logits[..cols].to_vec()).unwrap());
            let soft = t.softmax(x, 1).unwrap();
            let g = gumbel_softmax_sample(&mut t, x, tau, &mut SeededRng::new(seed)).unwrap();
            for v in [soft, g] {
                let row = t.value(v).row(0).to_vec();
                prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            Ok(())
        },
    );
    let kl = run_property(
        "kl",
        prop::collection::vec((-1e3..1e3f64, 0.01..10.0f64, -1e3..1e3f64, 0.01..10.0f64), 1..6),
        |params| {
            let col = |f: fn(&(f64, f64, f64, f64)) -> f64| DenseArray::from_vec(params.iter().map(f).collect());
            let mut t = Tape::new();
            let mq = t.constant(col(|p| p.0));
            let sq = t.constant(col(|p| p.1));
            let mp = t.constant(col(|p| p.2));
            let sp = t.constant(col(|p| p.3));
            let v = kl_diag_gaussians(&mut t, mq, sq, mp, sp).unwrap();
            prop_assert!(t.value(v).item() >= -1e-12);
            Ok(())
        },
    );
    for r in [kron, columns, simplex, kl] {
        if let Err(e) = r {
            failures.push(e);
        }
    }
    outcome(
        failures.is_empty(),
        format!("4 properties x 1000 cases, violations: {failures:?}"),
    )
}

fn gumbel_frequencies() -> Outcome {
    let probs = [0.5, 0.3, 0.15, 0.05];
    let n = 100_000;
    let row: Vec<f64> = probs.iter().map(|p: &f64| p.ln()).collect();
    let logits = DenseArray::new(vec![n, 4], row.iter().copied().cycle().take(n * 4).collect()).unwrap();
    let mut tape = Tape::new();
    let l = tape.constant(logits);
    let y = gumbel_softmax_sample(&mut tape, l, 0.01, &mut SeededRng::new(99)).unwrap();
    let y = tape.value(y);
    let mut counts = [0usize; 4];
    for r in 0..n {
        let v = y.row(r);
        counts[(0..4).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap()] += 1;
    }
    let freqs: Vec<f64> = counts.iter().map(|c| *c as f64 / n as f64).collect();
    let worst = freqs.iter().zip(probs).map(|(f, p)| (f - p).abs()).fold(0.0, f64::max);
    outcome(worst < 0.02, format!("frequencies {freqs:.4?} vs {probs:?}, worst gap {worst:.4} (< 0.02)"))
}

fn synthetic(scenes: usize, seed: u64) -> Vec<ScenarioBatch> {
    let cfg = SynthConfig {
        scenes,
        seed,
        vehicles: 7,
        ..SynthConfig::default()
    };
    let (records, targets) = synth_records(&cfg);
    let wcfg = WindowConfig {
        targets: Some(target_set(&targets)),
        stride: cfg.frames,
        ..WindowConfig::default()
    };
    window_scenarios(&records, &wcfg).unwrap().0
}

fn overfit() -> Outcome {
    let settings = Settings::parse_str(OVERFIT_CONFIG).unwrap();
    // The generator needs a larger step size and more, shorter epochs so that
    // the rate has nearly annealed by the last step.
    let mut gen_settings = settings.clone();
    gen_settings.set("lr", "0.005").unwrap();
    gen_settings.set("epoch_steps", "333").unwrap();
    let data = synthetic(10, 3);
    let all: Vec<&ScenarioBatch> = data.iter().collect();
    let start = Instant::now();
    let gstore = train_giraffe(&settings, &all, None, |_| {}).unwrap();
    let mut probe = gstore.clone();
    let cfg = settings.giraffe();
    let batch = Minibatch::new(&all).unwrap();
    let hf = giraffe::hf_target(&mut probe, &cfg, &batch).unwrap();
    let mut tape = Tape::new();
    let out = giraffe::forward(&mut tape, &mut probe, &cfg, &batch).unwrap();
    let pred = giraffe::batch_loss(&mut tape, &cfg, &out, &batch, &hf).unwrap().pred;
    let giraffe_secs = start.elapsed().as_secs_f64();
    let mut store = train_rhino(&gen_settings, &all, gstore, |_| {}).unwrap();
    let report = evaluate_rhino(&mut store, &gen_settings, &all, 10, 7).unwrap();
    let rmse50 = report.at(50).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        pred < 0.01 && rmse50 < 0.1 && secs < 600.0,
        format!(
            "fused L_pred {pred:.5} (< 0.01), min-of-10 RMSE@50 {rmse50:.4} m (< 0.1), {:.0} s forecaster + {:.0} s generator (< 600 s)",
            giraffe_secs,
            secs - giraffe_secs
        ),
    )
}

fn ablation() -> Outcome {
    let settings = Settings::parse_str(ABLATION_CONFIG).unwrap();
    let data = synthetic(100, 11);
    let (train_idx, test_idx) = split_indices(data.len(), settings.train_fraction, settings.split_seed);
    let (train, test) = (select(&data, &train_idx), select(&data, &test_idx));
    let gstore = train_giraffe(&settings, &train, None, |_| {}).unwrap();
    let mut means = Vec::new();
    let mut runs = Vec::new();
    for v in Variant::ALL {
        let mut per_seed = Vec::new();
        for seed in ABLATION_SEEDS {
            let s = Settings { seed, ..settings.clone() };
            let (r, _) = run_ablation(&s, v, &gstore, &train, &test, 7, |_| {}).unwrap();
            per_seed.push(r.at(50).unwrap());
        }
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        let cells: Vec<String> = per_seed.iter().map(|r| format!("{r:.3}")).collect();
        runs.push(format!("{v} {mean:.4} [{}]", cells.join(" ")));
        means.push(mean);
    }
    let passed = means[1..].iter().all(|r| means[0] <= *r);
    outcome(
        passed,
        format!(
            "mean RMSE@50 over seeds {ABLATION_SEEDS:?} on {} test scenarios: {}",
            test.len(),
            runs.join(", ")
        ),
    )
}

fn rhino_cli(args: &[&str], dir: &Path) {
    let out = Command::new(env!("CARGO_BIN_EXE_rhino")).args(args).current_dir(dir).output().unwrap();
    assert!(out.status.success(), "rhino {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn pipeline_run(dir: &Path) -> (Vec<u8>, Vec<u8>) {
    std::fs::write(dir.join("small.cfg"), PIPELINE_CONFIG).unwrap();
    rhino_cli(&["synth", "--out", "data", "--scenes", "6", "--seed", "3", "--vehicles", "4"], dir);
    rhino_cli(&["train-giraffe", "--data", "data", "--config", "small.cfg", "--out", "g.ckpt"], dir);
    rhino_cli(
        &["train-rhino", "--data", "data", "--config", "small.cfg", "--giraffe-ckpt", "g.ckpt", "--out", "r.ckpt"],
        dir,
    );
    rhino_cli(
        &["generate", "--ckpt", "r.ckpt", "--scenario", "data/scenes/scene_0000.csv", "--seed", "7", "--out", "gen.csv"],
        dir,
    );
    rhino_cli(&["evaluate", "--ckpt", "r.ckpt", "--data", "data", "--out", "eval"], dir);
    (
        std::fs::read(dir.join("eval/rmse.csv")).unwrap(),
        std::fs::read(dir.join("gen.csv")).unwrap(),
    )
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (rmse_a, gen_a) = pipeline_run(a.path());
    let (rmse_b, gen_b) = pipeline_run(b.path());
    outcome(
        rmse_a == rmse_b && gen_a == gen_b && !rmse_a.is_empty(),
        format!(
            "rmse.csv {} bytes identical: {}; generated samples identical: {}",
            rmse_a.len(),
            rmse_a == rmse_b,
            gen_a == gen_b
        ),
    )
}

fn rmse_oracle() -> Outcome {
    let mut rng = SeededRng::new(42);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let f = 1 + rng.below(60);
        let l = 1 + rng.below(10);
        let pred = rng.normal_array(&[f, l, 2]).scale(5.0);
        let truth = rng.normal_array(&[f, l, 2]);
        let horizons: Vec<usize> = (1..=f).collect();
        let got = rmse(&pred, &truth, &horizons).unwrap();
        for (&h, v) in horizons.iter().zip(&got) {
            let mut sum = 0.0;
            for i in 0..h {
                for j in 0..l {
                    sum += (pred.get(&[i, j, 0]) - truth.get(&[i, j, 0])).powi(2)
                        + (pred.get(&[i, j, 1]) - truth.get(&[i, j, 1])).powi(2);
                }
            }
            worst = worst.max((v - (sum / (h * l) as f64).sqrt()).abs());
        }
    }
    outcome(worst < 1e-12, format!("50 instances, largest difference {worst:.1e} (< 1e-12)"))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient suite", gradient_suite),
        ("hyperedge selection oracle", hyperedge_oracle),
        ("structural and probabilistic properties", property_suite),
        ("low-temperature Gumbel frequencies", gumbel_frequencies),
        ("overfit on 10 synthetic scenarios", overfit),
        ("ablation ordering", ablation),
        ("command-line determinism", determinism),
        ("RMSE against a double loop", rmse_oracle),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        report(i + 1, name, &o);
        if !o.passed {
            failed.push(format!("{}. {name}: {}", i + 1, o.detail));
        }
    }
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
