//! Reference cost counter: expands the network into plain layers first, then
//! counts each layer by brute force over output pixels.

use nars::space::{ArchConfig, BlockKind};

pub enum Layer {
    /// Grouped convolution; `groups == c_in` is depthwise.
    Conv {
        c_in: u64,
        c_out: u64,
        k: u64,
        stride: u64,
        groups: u64,
        res_in: u64,
    },
    /// One add per input element.
    GlobalPool { c: u64, res_in: u64 },
    /// Dense layer on a flattened input.
    Dense {
        inputs: u64,
        outputs: u64,
        bias: bool,
    },
    /// Channel-wise rescale, one multiply per element.
    Scale { c: u64, res: u64 },
}

fn out_size(res: u64, k: u64, stride: u64) -> u64 {
    let pad = (k - 1) / 2;
    (res + 2 * pad - k) / stride + 1
}

pub fn layers(arch: &ArchConfig) -> Vec<Layer> {
    let mut out = Vec::new();
    let mut res = u64::from(arch.resolution);
    let mut c = u64::from(arch.input_channels);
    for st in &arch.stages {
        let k = u64::from(st.kernel);
        let c_out = u64::from(st.channels);
        match st.block {
            BlockKind::Conv => {
                for b in 0..st.depth {
                    let s = if b == 0 { u64::from(st.stride) } else { 1 };
                    out.push(Layer::Conv {
                        c_in: c,
                        c_out,
                        k,
                        stride: s,
                        groups: 1,
                        res_in: res,
                    });
                    res = out_size(res, k, s);
                    c = c_out;
                }
            }
            BlockKind::MBConv => {
                for b in 0..st.depth {
                    let s = if b == 0 { u64::from(st.stride) } else { 1 };
                    let e = if b == 0 {
                        st.expansion_first.0
                    } else {
                        st.expansion_rest.0
                    };
                    let mid = (c * u64::from(e) * 2 + 100) / 200;
                    if e != 100 {
                        out.push(Layer::Conv {
                            c_in: c,
                            c_out: mid,
                            k: 1,
                            stride: 1,
                            groups: 1,
                            res_in: res,
                        });
                    }
                    out.push(Layer::Conv {
                        c_in: mid,
                        c_out: mid,
                        k,
                        stride: s,
                        groups: mid,
                        res_in: res,
                    });
                    res = out_size(res, k, s);
                    if st.se {
                        let quarter = c as f64 / 4.0;
                        let r = ((quarter / 8.0).round() as u64 * 8).max(8);
                        out.push(Layer::GlobalPool {
                            c: mid,
                            res_in: res,
                        });
                        out.push(Layer::Dense {
                            inputs: mid,
                            outputs: r,
                            bias: false,
                        });
                        out.push(Layer::Dense {
                            inputs: r,
                            outputs: mid,
                            bias: false,
                        });
                        out.push(Layer::Scale { c: mid, res });
                    }
                    out.push(Layer::Conv {
                        c_in: mid,
                        c_out,
                        k: 1,
                        stride: 1,
                        groups: 1,
                        res_in: res,
                    });
                    c = c_out;
                }
            }
            BlockKind::MBPool => {
                let mid = (c * u64::from(st.expansion_first.0) * 2 + 100) / 200;
                out.push(Layer::Conv {
                    c_in: c,
                    c_out: mid,
                    k: 1,
                    stride: 1,
                    groups: 1,
                    res_in: res,
                });
                out.push(Layer::GlobalPool {
                    c: mid,
                    res_in: res,
                });
                res = 1;
                out.push(Layer::Dense {
                    inputs: mid,
                    outputs: c_out,
                    bias: false,
                });
                c = c_out;
            }
            BlockKind::FC => {
                out.push(Layer::Dense {
                    inputs: c * res * res,
                    outputs: c_out,
                    bias: true,
                });
                c = c_out;
            }
            BlockKind::Skip => {
                if c != c_out {
                    out.push(Layer::Conv {
                        c_in: c,
                        c_out,
                        k: 1,
                        stride: 1,
                        groups: 1,
                        res_in: res,
                    });
                }
                c = c_out;
            }
        }
    }
    out
}

pub fn count(arch: &ArchConfig) -> (u64, u64) {
    let (mut flops, mut params) = (0u64, 0u64);
    for l in layers(arch) {
        match l {
            Layer::Conv {
                c_in,
                c_out,
                k,
                stride,
                groups,
                res_in,
            } => {
                let res = out_size(res_in, k, stride);
                let per_pixel = c_out * (c_in / groups) * k * k;
                for _y in 0..res {
                    for _x in 0..res {
                        flops += per_pixel;
                    }
                }
                params += per_pixel;
            }
            Layer::GlobalPool { c, res_in } => flops += c * res_in * res_in,
            Layer::Scale { c, res } => flops += c * res * res,
            Layer::Dense {
                inputs,
                outputs,
                bias,
            } => {
                flops += inputs * outputs;
                params += inputs * outputs + if bias { outputs } else { 0 };
            }
        }
    }
    (flops, params)
}
