//! Toy audio and visual encoders.
//!
//! The visual side pools the canvas 2x2 and runs three 3x3 convolutions,
//! ending in an (H, W, E) feature grid; the audio side is two fully
//! connected layers. Tags A and B pick different widths and init streams so
//! the dual pipelines stay heterogeneous.

use crate::error::Result;
use crate::rng::{stream, Stream};
use crate::tensor::{Graph, NodeId, Tensor};
use crate::world::WorldConfig;
use rand::Rng;

/// Which of the two heterogeneous architectures a network uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchTag {
    A,
    B,
}

impl ArchTag {
    pub fn name(self) -> &'static str {
        match self {
            ArchTag::A => "a",
            ArchTag::B => "b",
        }
    }

    /// (conv1, conv2, feature dim E, audio hidden width)
    fn widths(self) -> (usize, usize, usize, usize) {
        match self {
            ArchTag::A => (8, 12, 12, 32),
            ArchTag::B => (6, 10, 10, 24),
        }
    }

    fn seed_offset(self) -> u64 {
        match self {
            ArchTag::A => 0xa,
            ArchTag::B => 0xb,
        }
    }
}

/// Geometry the encoders need from the world.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderGeom {
    pub canvas: usize,
    pub channels: usize,
    pub audio_dim: usize,
    pub map_res: usize,
}

impl From<&WorldConfig> for EncoderGeom {
    fn from(cfg: &WorldConfig) -> Self {
        EncoderGeom {
            canvas: cfg.canvas,
            channels: cfg.channels,
            audio_dim: cfg.audio_dim,
            map_res: cfg.map_res,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VisualEncoder {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub w3: Tensor,
    pub b3: Tensor,
}

#[derive(Debug, Clone)]
pub struct AudioEncoder {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// One full localization network: matched audio and visual encoders.
#[derive(Debug, Clone)]
pub struct AvslNet {
    pub tag: ArchTag,
    pub geom: EncoderGeom,
    pub visual: VisualEncoder,
    pub audio: AudioEncoder,
}

fn he_conv(rng: &mut impl Rng, ci: usize, co: usize) -> Tensor {
    Tensor::randn(&[3, 3, ci, co], (2.0 / (9.0 * ci as f64)).sqrt(), rng)
}

fn he_fc(rng: &mut impl Rng, i: usize, o: usize) -> Tensor {
    Tensor::randn(&[i, o], (2.0 / i as f64).sqrt(), rng)
}

impl AvslNet {
    /// Fresh random network for (seed, tag). Distinct tags draw from
    /// distinct init streams.
    pub fn init(tag: ArchTag, geom: EncoderGeom, seed: u64) -> Self {
        Self::init_salted(tag, geom, seed, 0)
    }

    /// Like [`AvslNet::init`] with an extra stream salt, so homogeneous
    /// bundles can share widths while drawing distinct initializations.
    pub fn init_salted(tag: ArchTag, geom: EncoderGeom, seed: u64, salt: u64) -> Self {
        let (c1, c2, e, hidden) = tag.widths();
        let mut rng = stream(seed ^ salt, Stream::ParamInit, tag.seed_offset());
        let visual = VisualEncoder {
            w1: he_conv(&mut rng, geom.channels, c1),
            b1: Tensor::zeros(&[c1]),
            w2: he_conv(&mut rng, c1, c2),
            b2: Tensor::zeros(&[c2]),
            w3: he_conv(&mut rng, c2, e),
            b3: Tensor::zeros(&[e]),
        };
        let audio = AudioEncoder {
            w1: he_fc(&mut rng, geom.audio_dim, hidden),
            b1: Tensor::zeros(&[hidden]),
            w2: he_fc(&mut rng, hidden, e),
            b2: Tensor::zeros(&[e]),
        };
        AvslNet {
            tag,
            geom,
            visual,
            audio,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.tag.widths().2
    }

    pub fn named_params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("visual.w1", &self.visual.w1),
            ("visual.b1", &self.visual.b1),
            ("visual.w2", &self.visual.w2),
            ("visual.b2", &self.visual.b2),
            ("visual.w3", &self.visual.w3),
            ("visual.b3", &self.visual.b3),
            ("audio.w1", &self.audio.w1),
            ("audio.b1", &self.audio.b1),
            ("audio.w2", &self.audio.w2),
            ("audio.b2", &self.audio.b2),
        ]
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.visual.w1,
            &mut self.visual.b1,
            &mut self.visual.w2,
            &mut self.visual.b2,
            &mut self.visual.w3,
            &mut self.visual.b3,
            &mut self.audio.w1,
            &mut self.audio.b1,
            &mut self.audio.w2,
            &mut self.audio.b2,
        ]
    }

    /// Copy parameter values from another net of the same architecture.
    pub fn copy_params_from(&mut self, other: &AvslNet) {
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            *dst = src.clone();
        }
    }

    /// Register this net's parameters on a graph. Teachers enter as
    /// constants so gradients can never flow into them.
    pub fn nodes(&self, g: &mut Graph, trainable: bool) -> NetNodes {
        let ids = self
            .params()
            .into_iter()
            .map(|t| {
                if trainable {
                    g.leaf(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        NetNodes { ids }
    }
}

/// Node handles for one net's parameters inside a graph, in
/// `named_params` order.
#[derive(Debug, Clone)]
pub struct NetNodes {
    pub ids: Vec<NodeId>,
}

impl NetNodes {
    fn id(&self, i: usize) -> NodeId {
        self.ids[i]
    }

    /// Visual forward: (N,S,S,ch) -> (N,H,W,E) feature grid.
    pub fn forward_visual(&self, g: &mut Graph, input: NodeId) -> Result<NodeId> {
        let shape = g.value(input).shape().to_vec();
        let (n, s, ch) = (shape[0], shape[1], shape[3]);
        let half = s / 2;
        // 2x2 average pool via reshape + axis means
        let r = g.reshape(input, &[n, half, 2, half, 2, ch])?;
        let m1 = g.mean(r, Some(2))?;
        let pooled = g.mean(m1, Some(3))?;
        let c1 = g.conv2d(pooled, self.id(0))?;
        let c1 = g.add(c1, self.id(1))?;
        let c1 = g.relu(c1)?;
        let c2 = g.conv2d(c1, self.id(2))?;
        let c2 = g.add(c2, self.id(3))?;
        let c2 = g.relu(c2)?;
        let c3 = g.conv2d(c2, self.id(4))?;
        g.add(c3, self.id(5))
    }

    /// Audio forward: (N,D) -> (N,E).
    pub fn forward_audio(&self, g: &mut Graph, input: NodeId) -> Result<NodeId> {
        let h = g.matmul(input, self.id(6), false, false)?;
        let h = g.add(h, self.id(7))?;
        let h = g.relu(h)?;
        let o = g.matmul(h, self.id(8), false, false)?;
        g.add(o, self.id(9))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> EncoderGeom {
        EncoderGeom {
            canvas: 32,
            channels: 3,
            audio_dim: 16,
            map_res: 16,
        }
    }

    #[test]
    fn visual_output_matches_map_resolution() {
        let net = AvslNet::init(ArchTag::A, geom(), 3);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 32, 32, 3]));
        let nodes = net.nodes(&mut g, false);
        let f = nodes.forward_visual(&mut g, x).unwrap();
        assert_eq!(g.value(f).shape(), &[2, 16, 16, 12]);
    }

    #[test]
    fn audio_output_matches_feature_dim() {
        let net = AvslNet::init(ArchTag::B, geom(), 3);
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[4, 16]));
        let nodes = net.nodes(&mut g, false);
        let out = nodes.forward_audio(&mut g, a).unwrap();
        assert_eq!(g.value(out).shape(), &[4, 10]);
    }

    #[test]
    fn tags_give_distinct_architectures_and_inits() {
        let a = AvslNet::init(ArchTag::A, geom(), 3);
        let b = AvslNet::init(ArchTag::B, geom(), 3);
        assert_ne!(a.feature_dim(), b.feature_dim());
        let a2 = AvslNet::init(ArchTag::A, geom(), 3);
        assert_eq!(a.visual.w1.data(), a2.visual.w1.data());
        let a3 = AvslNet::init(ArchTag::A, geom(), 4);
        assert_ne!(a.visual.w1.data(), a3.visual.w1.data());
    }

    #[test]
    fn forward_is_finite_on_real_input() {
        use crate::rng::{stream, Stream};
        use crate::world::{generate_scene, render_pair, SampleId, Split, WorldConfig};
        let cfg = WorldConfig::default();
        let scene = generate_scene(&mut stream(8, Stream::Scene, 0), &cfg).unwrap();
        let pair = render_pair(&scene, &cfg, 8, SampleId(0), Split::Test, false).unwrap();
        let net = AvslNet::init(ArchTag::A, EncoderGeom::from(&cfg), 8);
        let mut g = Graph::new();
        let v = crate::pipeline::stack_visuals(&[&pair.visual]).unwrap();
        let a = crate::pipeline::stack_audios(&[&pair.audio]).unwrap();
        let vn = g.constant(v);
        let an = g.constant(a);
        let nodes = net.nodes(&mut g, false);
        let f = nodes.forward_visual(&mut g, vn).unwrap();
        let au = nodes.forward_audio(&mut g, an).unwrap();
        assert!(g.value(f).is_finite());
        assert!(g.value(au).is_finite());
    }
}
