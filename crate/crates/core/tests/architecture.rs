//! Forward passes of tiny networks against naive loop implementations, and
//! the channel recurrence over random configurations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use leafnet::densenet::{build_backbone, build_dense_block, DenseNetConfig, LayerKind, LayerWeights, ModelSpec};
use leafnet::nn::BN_EPSILON;
use leafnet::Tensor;

/// `[c][h][w]` feature map for a single sample.
type Map = Vec<Vec<Vec<f32>>>;

fn to_map(t: &Tensor<f32>, c: usize, h: usize, w: usize) -> Map {
    (0..c)
        .map(|ci| (0..h).map(|y| (0..w).map(|x| t.data()[(ci * h + y) * w + x]).collect()).collect())
        .collect()
}

fn conv(x: &Map, weight: &Tensor<f32>, stride: usize, pad: usize) -> Map {
    let s = weight.shape();
    let (cout, cin, k) = (s[0], s[1], s[2]);
    let (h, w) = (x[0].len() as isize, x[0][0].len() as isize);
    let ho = (h as usize + 2 * pad - k) / stride + 1;
    let wo = (w as usize + 2 * pad - k) / stride + 1;
    let wt = |o: usize, i: usize, dy: usize, dx: usize| weight.data()[((o * cin + i) * k + dy) * k + dx];
    (0..cout)
        .map(|o| {
            (0..ho)
                .map(|oy| {
                    (0..wo)
                        .map(|ox| {
                            let mut acc = 0f32;
                            for i in 0..cin {
                                for dy in 0..k {
                                    for dx in 0..k {
                                        let y = (oy * stride + dy) as isize - pad as isize;
                                        let xx = (ox * stride + dx) as isize - pad as isize;
                                        if y >= 0 && y < h && xx >= 0 && xx < w {
                                            acc += wt(o, i, dy, dx) * x[i][y as usize][xx as usize];
                                        }
                                    }
                                }
                            }
                            acc
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn bn_eval(x: &Map, gamma: &[f32], beta: &[f32], mean: &[f32], var: &[f32]) -> Map {
    x.iter()
        .enumerate()
        .map(|(c, plane)| {
            let s = 1.0 / (var[c] + BN_EPSILON).sqrt();
            plane
                .iter()
                .map(|row| row.iter().map(|&v| (v - mean[c]) * s * gamma[c] + beta[c]).collect())
                .collect()
        })
        .collect()
}

fn relu(x: &Map) -> Map {
    x.iter()
        .map(|p| p.iter().map(|r| r.iter().map(|&v| v.max(0.0)).collect()).collect())
        .collect()
}

fn max_pool(x: &Map, k: usize, stride: usize, pad: usize) -> Map {
    let (h, w) = (x[0].len() as isize, x[0][0].len() as isize);
    let ho = (h as usize + 2 * pad - k) / stride + 1;
    let wo = (w as usize + 2 * pad - k) / stride + 1;
    x.iter()
        .map(|p| {
            (0..ho)
                .map(|oy| {
                    (0..wo)
                        .map(|ox| {
                            let mut m = f32::NEG_INFINITY;
                            for dy in 0..k {
                                for dx in 0..k {
                                    let y = (oy * stride + dy) as isize - pad as isize;
                                    let xx = (ox * stride + dx) as isize - pad as isize;
                                    if y >= 0 && y < h && xx >= 0 && xx < w {
                                        m = m.max(p[y as usize][xx as usize]);
                                    }
                                }
                            }
                            m
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Reference forward for stem / dense units / final BN / GAP stacks
/// (no transitions), walking the layer list with the loops above.
fn reference_forward(model: &ModelSpec, input: Map) -> Vec<Map> {
    let mut acts: Vec<Map> = Vec::new();
    let mut cur = input;
    for layer in &model.layers {
        acts.push(cur.clone());
        cur = match (&layer.kind, &layer.weights) {
            (LayerKind::Conv2d { stride, pad, .. }, LayerWeights::Conv { weight }) => conv(&cur, weight, *stride, *pad),
            (LayerKind::BatchNorm { .. }, LayerWeights::BatchNorm(bn)) => bn_eval(
                &cur,
                bn.gamma.data(),
                bn.beta.data(),
                bn.running_mean.data(),
                bn.running_var.data(),
            ),
            (LayerKind::Relu, _) => relu(&cur),
            (LayerKind::MaxPool { kernel, stride, pad }, _) => max_pool(&cur, *kernel, *stride, *pad),
            (LayerKind::Concat { from }, _) => {
                let mut joined = acts[*from].clone();
                joined.extend(cur);
                joined
            }
            (LayerKind::GlobalAvgPool, _) => cur
                .iter()
                .map(|p| {
                    let n = (p.len() * p[0].len()) as f32;
                    vec![vec![p.iter().flatten().sum::<f32>() / n]]
                })
                .collect(),
            (kind, _) => panic!("reference has no {kind:?}"),
        };
    }
    acts.push(cur);
    acts
}

fn close(a: &[f32], b: &[f32]) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= 1e-5 * (1.0 + y.abs()), "{x} vs {y}");
    }
}

#[test]
fn single_unit_block_on_ones_matches_hand_trace() {
    let (block, c_out) = build_dense_block([1, 3, 3], 1, 1, 7).unwrap();
    assert_eq!(c_out, 2);
    let input = Tensor::ones(&[1, 1, 3, 3]);
    let out = block.infer(&input).unwrap();
    assert_eq!(out.shape(), &[1, 2, 3, 3]);
    // first channel is the untouched input
    assert!(out.data()[..9].iter().all(|&v| v == 1.0));
    let acts = reference_forward(&block, to_map(&input, 1, 3, 3));
    let reference: Vec<f32> = acts.last().unwrap().iter().flatten().flatten().copied().collect();
    close(out.data(), &reference);
}

#[test]
fn single_unit_network_matches_hand_trace() {
    let cfg = DenseNetConfig {
        block_layers: vec![1],
        growth_rate: 1,
        bottleneck_width: 4,
        compression: 0.5,
        stem_channels: 1,
        input_size: (8, 8, 3),
    };
    let model = build_backbone(&cfg, 3).unwrap();
    assert_eq!(model.output_shape(), &[2]);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let input = Tensor::from_fn(&[1, 3, 8, 8], |_| rng.gen_range(-1.0..1.0));
    let out = model.infer(&input).unwrap();
    let acts = reference_forward(&model, to_map(&input, 3, 8, 8));
    let reference: Vec<f32> = acts.last().unwrap().iter().flatten().flatten().copied().collect();
    close(out.data(), &reference);
    assert_eq!(model.spatial_trace(), [8, 4, 2, 2]);
}

#[test]
fn recorded_trace_follows_recurrence_for_random_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let blocks = rng.gen_range(1..=4usize);
        let side = 4 * (1 << (blocks - 1)) * rng.gen_range(1..=2usize);
        let cfg = DenseNetConfig {
            block_layers: (0..blocks).map(|_| rng.gen_range(1..=3)).collect(),
            growth_rate: rng.gen_range(1..=8),
            bottleneck_width: rng.gen_range(1..=16),
            compression: rng.gen_range(0.2..=1.0),
            stem_channels: rng.gen_range(2..=12),
            input_size: (side, side, 3),
        };
        let model = build_backbone(&cfg, 0).unwrap();
        let mut expected = vec![cfg.stem_channels];
        let mut c = cfg.stem_channels;
        for (i, &l) in cfg.block_layers.iter().enumerate() {
            c += l * cfg.growth_rate;
            expected.push(c);
            if i + 1 < blocks {
                c = (cfg.compression * c as f64).floor() as usize;
                expected.push(c);
            }
        }
        assert_eq!(model.channel_trace(), expected, "{cfg:?}");
        assert_eq!(model.output_shape(), &[c]);
        let mut s = side.div_ceil(2).div_ceil(2);
        let mut spatial = vec![side, side.div_ceil(2), s];
        for i in 0..blocks {
            spatial.push(s);
            if i + 1 < blocks {
                s /= 2;
                spatial.push(s);
            }
        }
        assert_eq!(model.spatial_trace(), spatial, "{cfg:?}");
    }
}

#[test]
fn bad_configs_are_rejected() {
    let mut cfg = DenseNetConfig::toy();
    cfg.input_size = (36, 36, 3); // 36 → 18 → 9, odd at the transition
    assert!(build_backbone(&cfg, 0).is_err());
    let mut cfg = DenseNetConfig::toy();
    cfg.block_layers = vec![];
    assert!(build_backbone(&cfg, 0).is_err());
}
