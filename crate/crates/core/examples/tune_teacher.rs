use pxkd_core::data::{generate_synthetic, make_splits, SynthConfig};
use pxkd_core::distill::{train_teacher, TrainParams};
use pxkd_core::eval::{embedding_stats, make_pairs, rank1_identification, verification_accuracy};
use pxkd_core::losses::{LossConfig, LossVariant};
use pxkd_core::model::EncoderConfig;

fn main() {
    let ds = generate_synthetic(&SynthConfig {
        classes: 64, per_class: 20, input_dim: 32, kappa: 50.0, seed: 1,
    }).unwrap();
    let ds = make_splits(&ds, 1, 4, 2).unwrap();
    let pairs = make_pairs(&ds, 3, 200, 3).unwrap();
    let tcfg = EncoderConfig::new(32, vec![512, 512, 512, 512], 16);
    for (epochs, lr, s) in [(16usize, 0.05, 8.0), (16, 0.1, 8.0), (16, 0.05, 16.0), (16, 0.1, 16.0)] {
        for seed in [7u64, 8, 9] {
            let loss = LossConfig::new(LossVariant::ArcFace, 0.2, s).unwrap();
            let tp = TrainParams { epochs, batch_size: 64, lr0: lr, momentum: 0.9, weight_decay: 4e-5 };
            let (teacher, _, r) = train_teacher(&tcfg, &loss, &ds, &tp, seed).unwrap();
            let ver = verification_accuracy(&teacher, &teacher, &pairs, &ds).unwrap();
            let r1 = rank1_identification(&teacher, &teacher, &ds, None).unwrap();
            let st = embedding_stats(&teacher, &teacher, &ds).unwrap();
            println!("ep {epochs} lr {lr} s {s} seed {seed}: loss {:.2}->{:.2} ver {ver:.1} rank1 {r1:.1} gap {:.3}",
                r.epoch_losses[0], r.epoch_losses.last().unwrap(), st.intra_mean - st.inter_mean);
        }
    }
}
