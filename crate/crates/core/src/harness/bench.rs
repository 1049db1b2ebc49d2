//! Inference throughput and the parameters / memory / frame-rate table.

use std::fmt::Write as _;
use std::time::Instant;

use crate::arch::{ArchConfig, ModelKind, NetGraph, Network};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchOptions {
    pub batch_size: usize,
    pub warmup: usize,
    pub timed: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            batch_size: 1,
            warmup: 2,
            timed: 10,
        }
    }
}

/// Frames per second of inference: median over `timed` forward passes
/// after `warmup` untimed ones.
pub fn benchmark_fps(net: &mut Network<f32>, opts: BenchOptions) -> Result<f64> {
    if opts.batch_size == 0 || opts.timed == 0 {
        return Err(Error::invalid("benchmark needs a positive batch size and pass count"));
    }
    let e = net.graph().config.input_extent;
    let batch = Tensor::from_fn(&[opts.batch_size, 1, e, e], |i| ((i * 2654435761) % 1000) as f32 / 1000.0);
    for _ in 0..opts.warmup {
        net.predict(batch.clone())?;
    }
    let mut secs: Vec<f64> = (0..opts.timed)
        .map(|_| {
            let t = Instant::now();
            net.predict(batch.clone()).map(|_| t.elapsed().as_secs_f64())
        })
        .collect::<Result<_>>()?;
    secs.sort_by(f64::total_cmp);
    let n = secs.len();
    let median = if n % 2 == 1 {
        secs[n / 2]
    } else {
        (secs[n / 2 - 1] + secs[n / 2]) / 2.0
    };
    Ok(opts.batch_size as f64 / median.max(f64::MIN_POSITIVE))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub model: ModelKind,
    pub params: u64,
    pub memory_bytes: u64,
    pub fps: f64,
}

/// Builds each model with its default configuration (plus `filter_base`
/// if given) and measures it.
pub fn bench_models(models: &[ModelKind], filter_base: Option<usize>, opts: BenchOptions) -> Result<Vec<BenchRow>> {
    models
        .iter()
        .map(|&model| {
            let mut cfg = ArchConfig::default();
            cfg.filter_base = filter_base;
            let graph = NetGraph::build(model, cfg)?;
            let (params, memory_bytes) = (graph.count_params(), graph.memory_bytes());
            let mut net = Network::<f32>::new(graph, 0);
            Ok(BenchRow {
                model,
                params,
                memory_bytes,
                fps: benchmark_fps(&mut net, opts)?,
            })
        })
        .collect()
}

/// Models as columns; rows for parameters, memory and frame rate.
pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut s = String::from("metric");
    for r in rows {
        write!(s, ",{}", r.model).unwrap();
    }
    s.push_str("\nparams");
    for r in rows {
        write!(s, ",{}", r.params).unwrap();
    }
    s.push_str("\nmemory_bytes");
    for r in rows {
        write!(s, ",{}", r.memory_bytes).unwrap();
    }
    s.push_str("\nfps");
    for r in rows {
        write!(s, ",{:.3}", r.fps).unwrap();
    }
    s.push('\n');
    s
}
