//! Benchmarks for the data-parallel hot loops: per-view mask scoring, pixel
//! map construction and heatmap accumulation.
//!
//! With the default `parallel` feature each benchmark runs under worker pools
//! of different sizes; build with `--no-default-features` to measure the
//! sequential fallback for comparison:
//!
//!   cargo bench -p funcseg3d
//!   cargo bench -p funcseg3d --no-default-features

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use funcseg3d::functional_seg::FunctionalMask2D;
use funcseg3d::lifting::{accumulate, build_pixel_map, pair_by_view_id, SpatialGrid};
use funcseg3d::masks::RleMask;
use funcseg3d::parallel::*;
use funcseg3d::scene::{CameraIntrinsics, CameraPose, DepthMap, PointCloud, View};
use funcseg3d::view_selection::{score_view, ContextMask, SelectionConfig};

/// xorshift; benches only need cheap deterministic variety
struct Xor(u64);

impl Xor {
    fn next(&mut self) -> u64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        self.0
    }

    fn unit(&mut self) -> f64 {
        (self.next() % 1_000_000) as f64 / 1_000_000.0
    }
}

fn worker_counts() -> Vec<Option<usize>> {
    if cfg!(feature = "parallel") {
        vec![Some(1), Some(2), None]
    } else {
        vec![None]
    }
}

fn label(workers: Option<usize>) -> String {
    if cfg!(feature = "parallel") {
        match workers {
            Some(n) => format!("parallel_{n}"),
            None => "parallel_default".into(),
        }
    } else {
        "sequential".into()
    }
}

fn bench_view_scoring(c: &mut Criterion) {
    let mut rng = Xor(0x5eed);
    let config = SelectionConfig::default();
    let views: Vec<Vec<ContextMask>> = (0..64)
        .map(|v| {
            (0..2)
                .map(|_| ContextMask {
                    view_id: format!("v{v}"),
                    pixels: (0..800)
                        .map(|_| ((rng.next() % 640) as u32, (rng.next() % 480) as u32))
                        .collect(),
                    confidence: rng.unit(),
                })
                .collect()
        })
        .collect();

    let mut group = c.benchmark_group("score_64_views");
    for workers in worker_counts() {
        group.bench_function(BenchmarkId::from_parameter(label(workers)), |b| {
            b.iter(|| {
                with_worker_count(workers, || {
                    let scored: Vec<_> = views
                        .par_iter()
                        .map(|masks| score_view("v", masks, 640, 480, &config).unwrap())
                        .collect();
                    black_box(scored)
                })
            })
        });
    }
    group.finish();
}

fn synthetic_lift_inputs() -> (PointCloud, Vec<View>, Vec<DepthMap>, Vec<FunctionalMask2D>) {
    let mut rng = Xor(0x11f7);
    let cloud = PointCloud {
        scene_id: "bench".into(),
        points: (0..20_000)
            .map(|_| {
                [
                    rng.unit() * 3.0 - 1.5,
                    rng.unit() * 2.0,
                    rng.unit() * 3.0 - 1.5,
                ]
            })
            .collect(),
    };
    let mut views = Vec::new();
    let mut depths = Vec::new();
    let mut masks = Vec::new();
    for v in 0..8 {
        let (width, height) = (320u32, 240u32);
        views.push(View {
            view_id: format!("b{v}"),
            color_path: Default::default(),
            depth_path: Default::default(),
            intrinsics: CameraIntrinsics {
                fx: 260.0,
                fy: 260.0,
                cx: 160.0,
                cy: 120.0,
                width,
                height,
            },
            pose: CameraPose {
                rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                translation: [rng.unit() - 0.5, 1.0, rng.unit() - 3.0],
            },
            image_to_depth_scale: 1.0,
        });
        let meters: Vec<f32> = (0..(width * height) as usize)
            .map(|_| (0.5 + rng.unit() * 2.5) as f32)
            .collect();
        depths.push(DepthMap::new(width, height, meters));
        let pixels: std::collections::BTreeSet<(u32, u32)> = (0..4000)
            .map(|_| ((rng.next() % 320) as u32, (rng.next() % 240) as u32))
            .collect();
        masks.push(FunctionalMask2D {
            view_id: format!("b{v}"),
            mask: RleMask::from_pixels(width, height, pixels).unwrap(),
            source_points: Vec::new(),
        });
    }
    (cloud, views, depths, masks)
}

fn bench_pixel_maps(c: &mut Criterion) {
    let (cloud, views, depths, _) = synthetic_lift_inputs();
    let grid = SpatialGrid::build(&cloud, 0.02);

    let mut group = c.benchmark_group("pixel_maps_8_views");
    group.sample_size(10);
    for workers in worker_counts() {
        group.bench_function(BenchmarkId::from_parameter(label(workers)), |b| {
            b.iter(|| {
                with_worker_count(workers, || {
                    let maps: Vec<_> = views
                        .par_iter()
                        .map(|view| {
                            let index = view.view_id[1..].parse::<usize>().unwrap();
                            build_pixel_map(view, &depths[index], &grid, 0.02)
                        })
                        .collect();
                    black_box(maps)
                })
            })
        });
    }
    group.finish();
}

fn bench_accumulate(c: &mut Criterion) {
    let (cloud, views, depths, masks) = synthetic_lift_inputs();
    let grid = SpatialGrid::build(&cloud, 0.02);
    let maps: Vec<_> = views
        .iter()
        .zip(&depths)
        .map(|(view, depth)| build_pixel_map(view, depth, &grid, 0.02))
        .collect();
    let pairs = pair_by_view_id(&masks, &maps).unwrap();

    let mut group = c.benchmark_group("accumulate_8_views");
    for workers in worker_counts() {
        group.bench_function(BenchmarkId::from_parameter(label(workers)), |b| {
            b.iter(|| with_worker_count(workers, || black_box(accumulate(&pairs))))
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_view_scoring,
    bench_pixel_maps,
    bench_accumulate
);
criterion_main!(benches);
