//! Small synthetic networks with seeded weights, shaped after common mobile
//! architectures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Conv2dAttrs, Graph, GraphDef, MatMulAttrs, OpAttrs, Pool2dAttrs, PoolMode, ReshapeAttrs};
use crate::tensor::{Layout, Shape, Tensor};

pub const PRESETS: [&str; 4] = ["mobilenet-mini", "squeezenet-mini", "resnet-mini", "inception-mini"];

struct Builder {
    def: GraphDef,
    rng: ChaCha8Rng,
}

impl Builder {
    fn new(seed: u64, input: Shape) -> (Self, String) {
        let mut def = GraphDef::default();
        let x = def.input("input", input);
        (
            Builder {
                def,
                rng: ChaCha8Rng::seed_from_u64(seed),
            },
            x,
        )
    }

    fn uniform(&mut self, len: usize, bound: f32) -> Vec<f32> {
        (0..len).map(|_| self.rng.gen_range(-bound..=bound)).collect()
    }

    fn conv_with(&mut self, name: &str, x: &str, c: Conv2dAttrs) -> String {
        let fan_in = (c.in_channels / c.groups) * c.kernel[0] * c.kernel[1];
        let w = self.uniform(c.weight_len(), (3.0 / fan_in as f32).sqrt());
        let b = self.uniform(c.out_channels, 0.1);
        self.def.node(name, OpAttrs::Conv2D(c), &[x], w, b)
    }

    fn conv(&mut self, name: &str, x: &str, k: usize, stride: usize, ic: usize, oc: usize) -> String {
        self.conv_with(name, x, Conv2dAttrs::square(k, stride, ic, oc))
    }

    fn depthwise(&mut self, name: &str, x: &str, stride: usize, c: usize) -> String {
        let mut a = Conv2dAttrs::square(3, stride, c, c);
        a.groups = c;
        self.conv_with(name, x, a)
    }

    fn relu(&mut self, name: &str, x: &str) -> String {
        self.def.node(name, OpAttrs::ReLU, &[x], vec![], vec![])
    }

    fn conv_relu(&mut self, name: &str, x: &str, k: usize, stride: usize, ic: usize, oc: usize) -> String {
        let c = self.conv(name, x, k, stride, ic, oc);
        self.relu(&format!("{name}_relu"), &c)
    }

    fn add(&mut self, name: &str, a: &str, b: &str) -> String {
        self.def.node(name, OpAttrs::Add, &[a, b], vec![], vec![])
    }

    fn pool(&mut self, name: &str, x: &str, mode: PoolMode, kernel: usize, stride: usize, pad: usize) -> String {
        let attrs = Pool2dAttrs {
            mode,
            kernel,
            stride,
            pad,
            global: false,
        };
        self.def.node(name, OpAttrs::Pool2D(attrs), &[x], vec![], vec![])
    }

    /// Global average pool, flatten, dense layer and softmax.
    fn classifier(mut self, x: &str, channels: usize, classes: usize) -> Result<Graph> {
        let attrs = Pool2dAttrs {
            mode: PoolMode::Avg,
            kernel: 0,
            stride: 1,
            pad: 0,
            global: true,
        };
        let p = self.def.node("gap", OpAttrs::Pool2D(attrs), &[x], vec![], vec![]);
        let f = self.def.node(
            "flatten",
            OpAttrs::Reshape(ReshapeAttrs { shape: vec![1, -1] }),
            &[&p],
            vec![],
            vec![],
        );
        let w = self.uniform(channels * classes, (3.0 / channels as f32).sqrt());
        let b = self.uniform(classes, 0.1);
        let mm = MatMulAttrs {
            in_features: channels,
            out_features: classes,
        };
        let fc = self.def.node("fc", OpAttrs::MatMul(mm), &[&f], w, b);
        let s = self.def.node("prob", OpAttrs::Softmax, &[&fc], vec![], vec![]);
        self.def.output(&s);
        Graph::new(self.def)
    }
}

fn mobilenet(seed: u64) -> Result<Graph> {
    let (mut b, x) = Builder::new(seed, Shape::nchw(1, 3, 64, 64));
    let mut x = b.conv_relu("conv0", &x, 3, 2, 3, 16);
    let mut c = 16;
    for (i, (stride, out)) in [(1, 32), (2, 64), (1, 64)].into_iter().enumerate() {
        let d = b.depthwise(&format!("dw{i}"), &x, stride, c);
        let d = b.relu(&format!("dw{i}_relu"), &d);
        x = b.conv_relu(&format!("pw{i}"), &d, 1, 1, c, out);
        c = out;
    }
    b.classifier(&x, c, 10)
}

fn squeezenet(seed: u64) -> Result<Graph> {
    let (mut b, x) = Builder::new(seed, Shape::nchw(1, 3, 64, 64));
    let x = b.conv_relu("conv0", &x, 3, 2, 3, 32);
    let mut x = b.pool("pool0", &x, PoolMode::Max, 3, 2, 1);
    let mut c = 32;
    // expand branches are summed instead of concatenated
    for (i, (squeeze, expand)) in [(8, 32), (16, 64)].into_iter().enumerate() {
        let s = b.conv_relu(&format!("fire{i}_squeeze"), &x, 1, 1, c, squeeze);
        let e1 = b.conv_relu(&format!("fire{i}_e1"), &s, 1, 1, squeeze, expand);
        let e3 = b.conv_relu(&format!("fire{i}_e3"), &s, 3, 1, squeeze, expand);
        x = b.add(&format!("fire{i}_sum"), &e1, &e3);
        c = expand;
    }
    let x = b.pool("pool1", &x, PoolMode::Max, 2, 2, 0);
    let x = b.conv_relu("conv_out", &x, 1, 1, c, 10);
    b.classifier(&x, 10, 10)
}

fn resnet(seed: u64) -> Result<Graph> {
    let (mut b, x) = Builder::new(seed, Shape::nchw(1, 3, 64, 64));
    let mut x = b.conv_relu("conv0", &x, 3, 2, 3, 16);
    let mut c = 16;
    for (i, (stride, out)) in [(1, 16), (2, 32), (2, 64)].into_iter().enumerate() {
        let a = b.conv_relu(&format!("res{i}_a"), &x, 3, stride, c, out);
        let r = b.conv(&format!("res{i}_b"), &a, 3, 1, out, out);
        let skip = if stride == 1 && c == out {
            x.clone()
        } else {
            b.conv(&format!("res{i}_proj"), &x, 1, stride, c, out)
        };
        let s = b.add(&format!("res{i}_sum"), &r, &skip);
        x = b.relu(&format!("res{i}_relu"), &s);
        c = out;
    }
    b.classifier(&x, c, 10)
}

fn inception(seed: u64) -> Result<Graph> {
    let (mut b, x) = Builder::new(seed, Shape::nchw(1, 3, 64, 64));
    let x = b.conv_relu("conv0", &x, 3, 2, 3, 16);
    let mut x = b.pool("pool0", &x, PoolMode::Max, 2, 2, 0);
    let c = 16;
    // branch outputs are summed instead of concatenated
    for i in 0..2 {
        let b1 = b.conv_relu(&format!("inc{i}_1x1"), &x, 1, 1, c, c);
        let r = b.conv_relu(&format!("inc{i}_7_reduce"), &x, 1, 1, c, 8);
        let mut row = Conv2dAttrs::square(7, 1, 8, 8);
        row.kernel = [1, 7];
        row.pad = [0, 3];
        let r = b.conv_with(&format!("inc{i}_1x7"), &r, row);
        let r = b.relu(&format!("inc{i}_1x7_relu"), &r);
        let mut col = Conv2dAttrs::square(7, 1, 8, c);
        col.kernel = [7, 1];
        col.pad = [3, 0];
        let b2 = b.conv_with(&format!("inc{i}_7x1"), &r, col);
        let b2 = b.relu(&format!("inc{i}_7x1_relu"), &b2);
        let k = if i == 0 { 3 } else { 5 };
        let b3 = b.conv_relu(&format!("inc{i}_{k}x{k}"), &x, k, 1, c, c);
        let p = b.pool(&format!("inc{i}_pool"), &x, PoolMode::Avg, 3, 1, 1);
        let b4 = b.conv_relu(&format!("inc{i}_pool_proj"), &p, 1, 1, c, c);
        let s = b.add(&format!("inc{i}_sum_a"), &b1, &b2);
        let s = b.add(&format!("inc{i}_sum_b"), &s, &b3);
        x = b.add(&format!("inc{i}_sum"), &s, &b4);
    }
    b.classifier(&x, c, 10)
}

/// Builds the named preset with weights drawn from `seed`.
pub fn preset(name: &str, seed: u64) -> Result<Graph> {
    match name {
        "mobilenet-mini" => mobilenet(seed),
        "squeezenet-mini" => squeezenet(seed),
        "resnet-mini" => resnet(seed),
        "inception-mini" => inception(seed),
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}

/// Uniform `[-1, 1]` NCHW tensor from `seed`.
pub fn random_input(shape: &Shape, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..shape.element_count()).map(|_| rng.gen_range(-1.0f32..=1.0)).collect();
    Tensor::from_vec(shape.clone(), Layout::Nchw, data).expect("length matches shape")
}
