//! Binary model (`HMNET1`) and optimizer-state (`HMOPT1`) files.
//!
//! ```text
//! model:    "HMNET1\0"  u32 layer_count  layer*
//! optstate: "HMOPT1\0"  u64 step  u32 layer_count  layer*
//! layer:    u8 tag  u32 n_desc  u32 desc[n_desc]  f64 values...
//! ```
//!
//! All integers and floats are little-endian. Tags and descriptors:
//!
//! | tag | layer      | descriptors                          |
//! |-----|------------|--------------------------------------|
//! | 1   | conv       | in_ch, out_ch, kernel, in_h, in_w    |
//! | 2   | leaky ReLU | -                                    |
//! | 3   | ReLU       | -                                    |
//! | 4   | max pool   | -                                    |
//! | 5   | dropout    | rate in parts per million            |
//! | 6   | flatten    | input dims                           |
//! | 7   | dense      | in, out                              |
//! | 8   | softmax    | -                                    |
//!
//! Model values are conv filters then biases, dense weights (row-major
//! `[out, in]`) then biases. Optimizer files store, per parametric layer, the
//! first moments in the same order followed by the second moments.

use std::io::{Read, Write};

use crate::nn::adam::AdamState;
use crate::nn::layers::{ConvLayer, DenseLayer};
use crate::nn::network::{Layer, Network};
use crate::nn::{NnError, Result, Tensor};
use crate::scalar::Scalar;

pub const MODEL_MAGIC: &[u8; 7] = b"HMNET1\0";
pub const OPTSTATE_MAGIC: &[u8; 7] = b"HMOPT1\0";

const TAG_CONV: u8 = 1;
const TAG_LEAKY_RELU: u8 = 2;
const TAG_RELU: u8 = 3;
const TAG_MAX_POOL: u8 = 4;
const TAG_DROPOUT: u8 = 5;
const TAG_FLATTEN: u8 = 6;
const TAG_DENSE: u8 = 7;
const TAG_SOFTMAX: u8 = 8;

const MAX_DESCRIPTORS: u32 = 16;

fn u32_of(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| NnError::Format(format!("{n} does not fit in u32")))
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_values<T: Scalar, W: Write>(w: &mut W, t: &Tensor<T>) -> Result<()> {
    for &v in t.data() {
        w.write_all(&v.to_f64_lossy().to_le_bytes())?;
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => NnError::Format("truncated file".into()),
        _ => NnError::Io(e),
    })?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_tensor<T: Scalar, R: Read>(r: &mut R, shape: &[usize]) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let v = f64::from_le_bytes(read_array(r)?);
        if !v.is_finite() {
            return Err(NnError::Format("non-finite parameter".into()));
        }
        data.push(T::lit(v));
    }
    Tensor::new(shape.to_vec(), data)
}

/// Descriptor record of one layer given its input shape.
fn descriptors<T: Scalar>(layer: &Layer<T>, input: &[usize]) -> Result<(u8, Vec<u32>)> {
    Ok(match layer {
        Layer::Conv(c) => (
            TAG_CONV,
            vec![
                u32_of(c.in_channels())?,
                u32_of(c.out_channels())?,
                u32_of(c.kernel())?,
                u32_of(input[1])?,
                u32_of(input[2])?,
            ],
        ),
        Layer::LeakyRelu => (TAG_LEAKY_RELU, vec![]),
        Layer::Relu => (TAG_RELU, vec![]),
        Layer::MaxPool => (TAG_MAX_POOL, vec![]),
        Layer::Dropout { rate } => (TAG_DROPOUT, vec![(rate * 1e6).round() as u32]),
        Layer::Flatten => (TAG_FLATTEN, input.iter().map(|&d| u32_of(d)).collect::<Result<_>>()?),
        Layer::Dense(d) => (TAG_DENSE, vec![u32_of(d.inputs())?, u32_of(d.outputs())?]),
        Layer::Softmax => (TAG_SOFTMAX, vec![]),
    })
}

fn write_layers<T: Scalar, W: Write>(
    w: &mut W,
    net: &Network<T>,
    mut values: impl FnMut(&mut W, usize) -> Result<()>,
) -> Result<()> {
    if !matches!(net.layers().first(), Some(Layer::Conv(_) | Layer::Flatten | Layer::Dense(_))) {
        return Err(NnError::Format(
            "first layer must be conv, flatten or dense to record the input shape".into(),
        ));
    }
    write_u32(w, u32_of(net.layers().len())?)?;
    let mut slot = 0;
    for (layer, input) in net.layers().iter().zip(net.shape_trace()) {
        let (tag, desc) = descriptors(layer, input)?;
        w.write_all(&[tag])?;
        write_u32(w, u32_of(desc.len())?)?;
        for d in desc {
            write_u32(w, d)?;
        }
        if matches!(layer, Layer::Conv(_) | Layer::Dense(_)) {
            values(w, slot)?;
            slot += 1;
        }
    }
    Ok(())
}

/// Layer skeleton read back from a file, parameters not yet attached.
enum Skeleton {
    Conv { in_ch: usize, out_ch: usize, kernel: usize, in_h: usize, in_w: usize },
    Dense { inputs: usize, outputs: usize },
    Plain { tag: u8, desc: Vec<u32> },
}

fn read_skeleton<R: Read>(r: &mut R) -> Result<Skeleton> {
    let [tag] = read_array::<1, R>(r)?;
    let n = read_u32(r)?;
    if n > MAX_DESCRIPTORS {
        return Err(NnError::Format(format!("layer has {n} descriptors")));
    }
    let desc: Vec<u32> = (0..n).map(|_| read_u32(r)).collect::<Result<_>>()?;
    let d = |i: usize| desc[i] as usize;
    let expect = |want: usize| {
        if desc.len() == want {
            Ok(())
        } else {
            Err(NnError::Format(format!("tag {tag} needs {want} descriptors, got {}", desc.len())))
        }
    };
    Ok(match tag {
        TAG_CONV => {
            expect(5)?;
            Skeleton::Conv { in_ch: d(0), out_ch: d(1), kernel: d(2), in_h: d(3), in_w: d(4) }
        }
        TAG_DENSE => {
            expect(2)?;
            Skeleton::Dense { inputs: d(0), outputs: d(1) }
        }
        TAG_DROPOUT => {
            expect(1)?;
            Skeleton::Plain { tag, desc }
        }
        TAG_FLATTEN => Skeleton::Plain { tag, desc },
        TAG_LEAKY_RELU | TAG_RELU | TAG_MAX_POOL | TAG_SOFTMAX => {
            expect(0)?;
            Skeleton::Plain { tag, desc }
        }
        other => return Err(NnError::Format(format!("unknown layer tag {other}"))),
    })
}

fn plain_layer<T: Scalar>(tag: u8, desc: &[u32]) -> Layer<T> {
    match tag {
        TAG_LEAKY_RELU => Layer::LeakyRelu,
        TAG_RELU => Layer::Relu,
        TAG_MAX_POOL => Layer::MaxPool,
        TAG_DROPOUT => Layer::Dropout { rate: desc[0] as f64 / 1e6 },
        TAG_FLATTEN => Layer::Flatten,
        TAG_SOFTMAX => Layer::Softmax,
        _ => unreachable!("parametric tags handled by the caller"),
    }
}

pub fn write_model<T: Scalar, W: Write>(net: &Network<T>, w: &mut W) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    let params = net.parameters();
    write_layers(w, net, |w, slot| {
        write_values(w, params[2 * slot])?;
        write_values(w, params[2 * slot + 1])
    })
}

pub fn read_model<T: Scalar, R: Read>(r: &mut R) -> Result<Network<T>> {
    let magic: [u8; 7] = read_array(r)?;
    if &magic != MODEL_MAGIC {
        return Err(NnError::Format("bad model magic".into()));
    }
    let count = read_u32(r)?;
    let mut layers = Vec::new();
    let mut input_shape: Option<Vec<usize>> = None;
    for _ in 0..count {
        let layer = match read_skeleton(r)? {
            Skeleton::Conv { in_ch, out_ch, kernel, in_h, in_w } => {
                input_shape.get_or_insert_with(|| vec![in_ch, in_h, in_w]);
                let filters = read_tensor(r, &[out_ch, in_ch, kernel, kernel])?;
                let biases = read_tensor(r, &[out_ch])?;
                Layer::Conv(ConvLayer::new(filters, biases)?)
            }
            Skeleton::Dense { inputs, outputs } => {
                input_shape.get_or_insert_with(|| vec![inputs]);
                let weights = read_tensor(r, &[outputs, inputs])?;
                let biases = read_tensor(r, &[outputs])?;
                Layer::Dense(DenseLayer::new(weights, biases)?)
            }
            Skeleton::Plain { tag, desc } => {
                if tag == TAG_FLATTEN {
                    input_shape.get_or_insert_with(|| desc.iter().map(|&d| d as usize).collect());
                }
                plain_layer(tag, &desc)
            }
        };
        layers.push(layer);
    }
    let input_shape =
        input_shape.ok_or_else(|| NnError::Format("model has no shape-bearing layer".into()))?;
    Network::new(input_shape, layers)
}

pub fn write_optstate<T: Scalar, W: Write>(net: &Network<T>, w: &mut W) -> Result<()> {
    w.write_all(OPTSTATE_MAGIC)?;
    let state = net.adam_state();
    w.write_all(&state.step.to_le_bytes())?;
    write_layers(w, net, |w, slot| {
        for moments in [&state.first_moment, &state.second_moment] {
            write_values(w, &moments[2 * slot])?;
            write_values(w, &moments[2 * slot + 1])?;
        }
        Ok(())
    })
}

/// Reads optimizer state and attaches it to `net`, whose architecture must match.
pub fn read_optstate<T: Scalar, R: Read>(net: &mut Network<T>, r: &mut R) -> Result<()> {
    let magic: [u8; 7] = read_array(r)?;
    if &magic != OPTSTATE_MAGIC {
        return Err(NnError::Format("bad optimizer-state magic".into()));
    }
    let step = u64::from_le_bytes(read_array(r)?);
    let count = read_u32(r)? as usize;
    if count != net.layers().len() {
        return Err(NnError::Format(format!(
            "optimizer state has {count} layers, model has {}",
            net.layers().len()
        )));
    }
    let mut first = Vec::new();
    let mut second = Vec::new();
    for _ in 0..count {
        let shapes: Option<[Vec<usize>; 2]> = match read_skeleton(r)? {
            Skeleton::Conv { in_ch, out_ch, kernel, .. } => {
                Some([vec![out_ch, in_ch, kernel, kernel], vec![out_ch]])
            }
            Skeleton::Dense { inputs, outputs } => Some([vec![outputs, inputs], vec![outputs]]),
            Skeleton::Plain { .. } => None,
        };
        if let Some([w, b]) = shapes {
            first.push(read_tensor(r, &w)?);
            first.push(read_tensor(r, &b)?);
            second.push(read_tensor(r, &w)?);
            second.push(read_tensor(r, &b)?);
        }
    }
    net.set_adam_state(AdamState { first_moment: first, second_moment: second, step })
}
