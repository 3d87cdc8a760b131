use rand::Rng;

use super::{LayerSpec, Network, Scalar};
use crate::error::{Error, Result};

/// Hyper-parameters of the reference CNN.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub height: usize,
    pub width: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            height: 28,
            width: 28,
            conv1: 8,
            conv2: 16,
            hidden: 60,
            classes: 5,
        }
    }
}

/// Where the network is cut into local (device) and server halves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitPoint {
    /// After the convolutional feature extractor.
    A,
    /// After the first hidden dense layer.
    B,
}

impl SplitPoint {
    pub fn name(self) -> &'static str {
        match self {
            SplitPoint::A => "A",
            SplitPoint::B => "B",
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.height < 4 || self.width < 4 || self.height % 4 != 0 || self.width % 4 != 0 {
            return Err(Error::invalid("input height and width must be multiples of 4"));
        }
        if self.conv1 == 0 || self.conv2 == 0 || self.hidden == 0 || self.classes < 2 {
            return Err(Error::invalid("layer widths must be positive and classes >= 2"));
        }
        Ok(())
    }

    fn features(&self) -> usize {
        self.conv2 * (self.height / 4) * (self.width / 4)
    }

    /// Width of the intermediate representation at a cut.
    pub fn cut_dim(&self, split: SplitPoint) -> usize {
        match split {
            SplitPoint::A => self.features(),
            SplitPoint::B => self.hidden,
        }
    }

    fn extractor(&self, in_ch: usize) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv2d {
                in_ch,
                out_ch: self.conv1,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Conv2d {
                in_ch: self.conv1,
                out_ch: self.conv2,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Flatten,
        ]
    }

    fn hidden_layers(&self, inputs: usize) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Dense {
                inputs,
                outputs: self.hidden,
            },
            LayerSpec::Relu,
        ]
    }

    fn head(&self, inputs: usize) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Dense {
                inputs,
                outputs: self.classes,
            },
            LayerSpec::SoftmaxCrossEntropy { classes: self.classes },
        ]
    }

    /// Layers of the complete network for `in_ch` stacked input views.
    pub fn full_layers(&self, in_ch: usize) -> Vec<LayerSpec> {
        let mut layers = self.extractor(in_ch);
        layers.extend(self.hidden_layers(self.features()));
        layers.extend(self.head(self.hidden));
        layers
    }

    pub fn l_layers(&self, split: SplitPoint) -> Vec<LayerSpec> {
        let mut layers = self.extractor(1);
        if split == SplitPoint::B {
            layers.extend(self.hidden_layers(self.features()));
        }
        layers
    }

    /// Server layers taking `width_factor` concatenated cut representations.
    pub fn s_layers(&self, split: SplitPoint, width_factor: usize) -> Vec<LayerSpec> {
        let inputs = self.cut_dim(split) * width_factor;
        match split {
            SplitPoint::A => {
                let mut layers = self.hidden_layers(inputs);
                layers.extend(self.head(self.hidden));
                layers
            }
            SplitPoint::B => self.head(inputs),
        }
    }
}

fn build<T: Scalar, R: Rng + ?Sized>(input: Vec<usize>, layers: Vec<LayerSpec>, rng: &mut R) -> Result<Network<T>> {
    let mut net = Network::new(input, layers)?;
    net.init_he_uniform(rng);
    Ok(net)
}

/// He-initialized complete network over `in_ch` input channels.
pub fn full_network<T: Scalar, R: Rng + ?Sized>(arch: Architecture, in_ch: usize, rng: &mut R) -> Result<Network<T>> {
    arch.validate()?;
    build(vec![in_ch, arch.height, arch.width], arch.full_layers(in_ch), rng)
}

/// He-initialized device half.
pub fn l_model<T: Scalar, R: Rng + ?Sized>(arch: Architecture, split: SplitPoint, rng: &mut R) -> Result<Network<T>> {
    arch.validate()?;
    build(vec![1, arch.height, arch.width], arch.l_layers(split), rng)
}

/// He-initialized server half.
pub fn s_model<T: Scalar, R: Rng + ?Sized>(
    arch: Architecture,
    split: SplitPoint,
    width_factor: usize,
    rng: &mut R,
) -> Result<Network<T>> {
    arch.validate()?;
    if width_factor == 0 {
        return Err(Error::invalid("server width factor must be positive"));
    }
    build(vec![arch.cut_dim(split) * width_factor], arch.s_layers(split, width_factor), rng)
}
