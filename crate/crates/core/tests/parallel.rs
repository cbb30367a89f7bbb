//! The rayon and sequential paths must agree bit for bit. Kept in its own
//! binary with a single test because the toggle is process-global.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use leafnet::data::{batches, synthetic_blobs, AugmentSpec, SyntheticTask};
use leafnet::densenet::{build_model, write_model, DenseNetConfig, HeadConfig};
use leafnet::experiment::Trainer;
use leafnet::optim::OptimizerHyper;
use leafnet::par::set_parallel;
use leafnet::{Tape, Tensor};

fn conv_grads() -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::from_fn(&[4, 16, 20, 20], |_| rng.gen_range(-1.0f32..1.0));
    let w = Tensor::from_fn(&[24, 16, 3, 3], |_| rng.gen_range(-1.0f32..1.0));
    let mut tape = Tape::new();
    let xv = tape.param(x);
    let wv = tape.param(w);
    let y = tape.conv2d(xv, wv, 1, 1).unwrap();
    let sq = tape.mul(y, y).unwrap();
    let loss = tape.sum(sq).unwrap();
    let g = tape.backward(loss).unwrap();
    let mut bits: Vec<u32> = tape.value(y).data().iter().map(|v| v.to_bits()).collect();
    for v in [xv, wv] {
        bits.extend(g.get(v).unwrap().data().iter().map(|v| v.to_bits()));
    }
    bits
}

fn training_run() -> (Vec<u32>, Vec<u8>) {
    let ds = synthetic_blobs(SyntheticTask::B, 12, 32, 2).unwrap();
    let model = build_model(&DenseNetConfig::toy(), &HeadConfig::new(16, 0.1, 3), 3).unwrap();
    let mut trainer = Trainer::new(model, OptimizerHyper::adam(), 4, 12, Some(AugmentSpec::default())).unwrap();
    let mut losses = Vec::new();
    for _ in 0..2 {
        let (_, l) = trainer.train_epoch(&ds).unwrap();
        losses.extend(l.into_iter().map(f32::to_bits));
    }
    let batch = batches(&ds, 36, false, 0, 0).unwrap().next().unwrap();
    losses.extend(trainer.model.infer(&batch.inputs).unwrap().data().iter().map(|v| v.to_bits()));
    (losses, write_model(&trainer.model).unwrap())
}

#[test]
fn parallel_and_sequential_paths_are_bitwise_equal() {
    set_parallel(true);
    let conv_par = conv_grads();
    let run_par = training_run();
    set_parallel(false);
    let conv_seq = conv_grads();
    let run_seq = training_run();
    set_parallel(true);
    assert_eq!(conv_par, conv_seq);
    assert_eq!(run_par, run_seq);
}
