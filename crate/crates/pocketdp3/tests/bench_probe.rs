// Temporary throughput probe; deleted before final commit.
use pocketdp3::dim::{DiMConfig, DiMDecoder, FilmMode};
use pocketdp3::numerics::{Array, Graph, ParamStore, RngStream};
use pocketdp3::perception::{ContextNet, ObsFusion, PointCloud, ProprioState, SceneEncoder};
use std::time::Instant;

fn rand_cloud(n: usize, rng: &mut RngStream) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| [rng.normal() as f32, rng.normal() as f32, rng.normal() as f32])
            .collect(),
    )
    .unwrap()
}

#[test]
fn probe() {
    for (name, d, k_pts) in [("tiny-k32", 64usize, 32usize), ("tiny-k64", 64, 64), ("tiny-k128", 64, 128), ("base-k32", 128, 32), ("base-k64", 128, 64)] {
        let mut rng = RngStream::new(1);
        let mut store = ParamStore::<f32>::new();
        let cfg = DiMConfig { k_blocks: 4, d, expansion: 4, horizon: 8, action_dim: 2, cond_dim: 64 };
        let dec = DiMDecoder::build(&mut store, &cfg, FilmMode::TokenConcat, &mut rng).unwrap();
        let enc = SceneEncoder::build(&mut store, &mut rng);
        let ctx = ContextNet::build(&mut store, 2, 2, 64, ObsFusion::Concat, &mut rng);
        for p in store.iter_mut() {
            for v in p.value.data_mut() { *v = (rng.normal() * 0.05) as f32; }
        }
        let frames: Vec<(PointCloud, ProprioState)> = (0..2)
            .map(|_| (rand_cloud(k_pts, &mut rng), ProprioState::new(vec![0.1, 0.2]).unwrap()))
            .collect();
        let a_t = {
            let mut a = Array::<f32>::zeros(&[8, 2]);
            for v in a.data_mut() { *v = rng.normal() as f32; }
            a
        };
        let target = a_t.clone();

        let iters = 200;
        let mut sink = store.grad_buffers();
        let t0 = Instant::now();
        for _ in 0..iters {
            let mut g = Graph::new(&store);
            let c = ctx.forward(&mut g, &enc, &frames, 42, 100).unwrap();
            let av = g.input(a_t.clone());
            let y = dec.forward(&mut g, av, c).unwrap();
            let loss = g.mse(y, &target).unwrap();
            g.backward(loss, &mut sink).unwrap();
            std::hint::black_box(&sink);
        }
        let fb = t0.elapsed().as_secs_f64() / iters as f64;

        let t1 = Instant::now();
        for _ in 0..iters {
            let mut g = Graph::new(&store);
            let c = ctx.forward(&mut g, &enc, &frames, 42, 100).unwrap();
            let av = g.input(a_t.clone());
            let y = dec.forward(&mut g, av, c).unwrap();
            std::hint::black_box(g.value(y));
        }
        let fwd = t1.elapsed().as_secs_f64() / iters as f64;
        println!("{name}: fwd+bwd {:.3} ms/sample, fwd {:.3} ms", fb * 1e3, fwd * 1e3);
    }
}
