//! Little-endian binary checkpoints of trained models.
//!
//! Layout: `b"VAEC"`, `u32` version, `u8` variant tag, `u64` input dim,
//! `u64` latent dim, `u64` width count and widths, `u64` seed, five `f64`
//! hyperparameters, `f64` final MSE, `u64` epochs, `u8` converged flag, then
//! every layer (encoder, `mu` head, `logvar` head, decoder) and finally a
//! `u8` discriminator flag followed by its layers. A layer is a `u8`
//! activation, `u64` rows, `u64` cols, the row-major weights and the bias.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Activation, DenseLayer, Matrix};
use crate::vae::{Hyper, TrainedModel, VaeArchitectureSpec, Variant, DISCRIMINATOR_DEPTH};

pub const MAGIC: &[u8; 4] = b"VAEC";
pub const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn layer(&mut self, layer: &DenseLayer) {
        self.u8(match layer.activation {
            Activation::Relu => 0,
            Activation::Identity => 1,
        });
        self.usize(layer.weight.rows());
        self.usize(layer.weight.cols());
        for v in layer.weight.data() {
            self.f64(*v);
        }
        for v in &layer.bias {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Decode(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Decode(format!("size {v} does not fit")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n > self.bytes.len() / 8 {
            return Err(Error::Decode(format!("implausible length {n}")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn layer(&mut self) -> Result<DenseLayer> {
        let activation = match self.u8()? {
            0 => Activation::Relu,
            1 => Activation::Identity,
            t => return Err(Error::Decode(format!("unknown activation tag {t}"))),
        };
        let rows = self.usize()?;
        let cols = self.usize()?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Decode("layer size overflows".into()))?;
        let weight = Matrix::from_vec(rows, cols, self.f64s(n)?)?;
        let bias = self.f64s(rows)?;
        DenseLayer::new(weight, bias, activation)
    }
}

pub fn to_bytes(model: &TrainedModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    let spec = &model.spec;
    w.u8(spec.variant.tag());
    w.usize(spec.input_dim);
    w.usize(spec.latent_dim);
    w.usize(spec.encoder_widths.len());
    for &width in &spec.encoder_widths {
        w.usize(width);
    }
    w.u64(model.seed);
    let h = &spec.hyper;
    for v in [h.beta, h.tc_weight, h.gamma, h.lambda_od, h.lambda_d, model.final_mse] {
        w.f64(v);
    }
    w.usize(model.epochs_run);
    w.u8(model.converged as u8);
    for layer in &model.encoder {
        w.layer(layer);
    }
    w.layer(&model.mu_head);
    w.layer(&model.logvar_head);
    for layer in &model.decoder {
        w.layer(layer);
    }
    match &model.discriminator {
        Some(layers) => {
            w.u8(1);
            w.usize(layers.len());
            for layer in layers {
                w.layer(layer);
            }
        }
        None => w.u8(0),
    }
    w.0
}

pub fn from_bytes(bytes: &[u8]) -> Result<TrainedModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Decode("not a model checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Decode(format!("unsupported checkpoint version {version}")));
    }
    let tag = r.u8()?;
    let variant = Variant::from_tag(tag).ok_or_else(|| Error::Decode(format!("unknown variant tag {tag}")))?;
    let input_dim = r.usize()?;
    let latent_dim = r.usize()?;
    let n_widths = r.usize()?;
    if n_widths > bytes.len() {
        return Err(Error::Decode("implausible width count".into()));
    }
    let widths = (0..n_widths).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let seed = r.u64()?;
    let hyper = Hyper {
        beta: r.f64()?,
        tc_weight: r.f64()?,
        gamma: r.f64()?,
        lambda_od: r.f64()?,
        lambda_d: r.f64()?,
    };
    let final_mse = r.f64()?;
    let epochs_run = r.usize()?;
    let converged = r.u8()? != 0;
    let spec = VaeArchitectureSpec::new(variant, input_dim, widths, latent_dim).with_hyper(hyper);
    spec.validate()?;
    let encoder = (0..spec.encoder_widths.len()).map(|_| r.layer()).collect::<Result<Vec<_>>>()?;
    let mu_head = r.layer()?;
    let logvar_head = r.layer()?;
    let decoder = (0..spec.encoder_widths.len() + 1).map(|_| r.layer()).collect::<Result<Vec<_>>>()?;
    let discriminator = match r.u8()? {
        0 => None,
        1 => {
            let n = r.usize()?;
            if n != DISCRIMINATOR_DEPTH + 1 {
                return Err(Error::Decode(format!("discriminator has {n} layers")));
            }
            Some((0..n).map(|_| r.layer()).collect::<Result<Vec<_>>>()?)
        }
        t => return Err(Error::Decode(format!("bad discriminator flag {t}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Decode("trailing bytes after checkpoint".into()));
    }
    let model = TrainedModel {
        spec,
        encoder,
        mu_head,
        logvar_head,
        decoder,
        discriminator,
        seed,
        final_mse,
        epochs_run,
        converged,
    };
    check_shapes(&model)?;
    Ok(model)
}

fn check_shapes(m: &TrainedModel) -> Result<()> {
    let mut width = m.spec.input_dim;
    for (layer, &w) in m.encoder.iter().zip(&m.spec.encoder_widths) {
        if layer.input_dim() != width || layer.output_dim() != w {
            return Err(Error::Decode("encoder layer shape mismatch".into()));
        }
        width = w;
    }
    for head in [&m.mu_head, &m.logvar_head] {
        if head.input_dim() != width || head.output_dim() != m.spec.latent_dim {
            return Err(Error::Decode("head shape mismatch".into()));
        }
    }
    let mut width = m.spec.latent_dim;
    for layer in &m.decoder {
        if layer.input_dim() != width {
            return Err(Error::Decode("decoder layer shape mismatch".into()));
        }
        width = layer.output_dim();
    }
    if width != m.spec.input_dim {
        return Err(Error::Decode("decoder output width mismatch".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        for variant in Variant::ALL {
            let spec = VaeArchitectureSpec::new(variant, 7, alloc::vec![5, 4], 3);
            let mut m = TrainedModel::init(spec, 11).unwrap();
            m.final_mse = 0.123_456_789;
            m.epochs_run = 17;
            let bytes = to_bytes(&m);
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(to_bytes(&back), bytes);
        }
    }

    #[test]
    fn corrupted_input_is_rejected() {
        let spec = VaeArchitectureSpec::new(Variant::Beta, 3, alloc::vec![2], 2);
        let bytes = to_bytes(&TrainedModel::init(spec, 1).unwrap());
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }
}
