use super::{Init, SmaeConfig};

/// Parameter indices of one transformer block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockParams {
    pub norm1_gain: usize,
    pub norm1_bias: usize,
    pub qkv_weight: usize,
    pub qkv_bias: usize,
    pub proj_weight: usize,
    pub proj_bias: usize,
    pub norm2_gain: usize,
    pub norm2_bias: usize,
    pub fc1_weight: usize,
    pub fc1_bias: usize,
    pub fc2_weight: usize,
    pub fc2_bias: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderParams {
    pub embed_weight: usize,
    pub embed_bias: usize,
    pub mask_token: usize,
    pub pos_embed: usize,
    pub blocks: Vec<BlockParams>,
    pub norm_gain: usize,
    pub norm_bias: usize,
    pub recon_weight: usize,
    pub recon_bias: usize,
}

/// Where each named tensor sits in the model's flat parameter list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub patch_weight: usize,
    pub patch_bias: usize,
    pub cls_token: usize,
    pub pos_embed: usize,
    pub encoder: Vec<BlockParams>,
    pub encoder_norm_gain: usize,
    pub encoder_norm_bias: usize,
    pub decoder: Option<DecoderParams>,
    pub cls_head: Option<(usize, usize)>,
}

pub(crate) type ParamSpec = (String, Vec<usize>, Init);

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push((name, shape, init));
        self.specs.len() - 1
    }

    fn block(&mut self, prefix: &str, dim: usize, mlp_ratio: usize) -> BlockParams {
        let hidden = dim * mlp_ratio;
        BlockParams {
            norm1_gain: self.add(format!("{prefix}.norm1.gain"), vec![dim], Init::Ones),
            norm1_bias: self.add(format!("{prefix}.norm1.bias"), vec![dim], Init::Zeros),
            qkv_weight: self.add(format!("{prefix}.attn.qkv.weight"), vec![dim, 3 * dim], Init::Normal),
            qkv_bias: self.add(format!("{prefix}.attn.qkv.bias"), vec![3 * dim], Init::Zeros),
            proj_weight: self.add(format!("{prefix}.attn.proj.weight"), vec![dim, dim], Init::Normal),
            proj_bias: self.add(format!("{prefix}.attn.proj.bias"), vec![dim], Init::Zeros),
            norm2_gain: self.add(format!("{prefix}.norm2.gain"), vec![dim], Init::Ones),
            norm2_bias: self.add(format!("{prefix}.norm2.bias"), vec![dim], Init::Zeros),
            fc1_weight: self.add(format!("{prefix}.mlp.fc1.weight"), vec![dim, hidden], Init::Normal),
            fc1_bias: self.add(format!("{prefix}.mlp.fc1.bias"), vec![hidden], Init::Zeros),
            fc2_weight: self.add(format!("{prefix}.mlp.fc2.weight"), vec![hidden, dim], Init::Normal),
            fc2_bias: self.add(format!("{prefix}.mlp.fc2.bias"), vec![dim], Init::Zeros),
        }
    }
}

impl Layout {
    pub(crate) fn build(config: &SmaeConfig) -> (Layout, Vec<ParamSpec>) {
        let (p, d, dd) = (config.patch_size, config.embed_dim, config.decoder_dim);
        let tokens = config.n_patches() + 1;
        let mut b = Builder { specs: Vec::new() };

        let patch_weight = b.add("patch_embed.weight".into(), vec![p, d], Init::Normal);
        let patch_bias = b.add("patch_embed.bias".into(), vec![d], Init::Zeros);
        let cls_token = b.add("cls_token".into(), vec![1, d], Init::Normal);
        let pos_embed = b.add("pos_embed".into(), vec![tokens, d], Init::Sinusoidal);
        let encoder = (0..config.encoder_depth)
            .map(|i| b.block(&format!("encoder.{i}"), d, config.mlp_ratio))
            .collect();
        let encoder_norm_gain = b.add("encoder.norm.gain".into(), vec![d], Init::Ones);
        let encoder_norm_bias = b.add("encoder.norm.bias".into(), vec![d], Init::Zeros);

        let decoder = config.has_decoder().then(|| DecoderParams {
            embed_weight: b.add("decoder.embed.weight".into(), vec![d, dd], Init::Normal),
            embed_bias: b.add("decoder.embed.bias".into(), vec![dd], Init::Zeros),
            mask_token: b.add("mask_token".into(), vec![1, dd], Init::Normal),
            pos_embed: b.add("decoder.pos_embed".into(), vec![tokens, dd], Init::Sinusoidal),
            blocks: (0..config.decoder_depth)
                .map(|i| b.block(&format!("decoder.{i}"), dd, config.mlp_ratio))
                .collect(),
            norm_gain: b.add("decoder.norm.gain".into(), vec![dd], Init::Ones),
            norm_bias: b.add("decoder.norm.bias".into(), vec![dd], Init::Zeros),
            recon_weight: b.add("recon_head.weight".into(), vec![dd, p], Init::Normal),
            recon_bias: b.add("recon_head.bias".into(), vec![p], Init::Zeros),
        });

        let cls_head = config.has_head().then(|| {
            (
                b.add("cls_head.weight".into(), vec![d, config.n_classes], Init::Normal),
                b.add("cls_head.bias".into(), vec![config.n_classes], Init::Zeros),
            )
        });

        (
            Layout {
                patch_weight,
                patch_bias,
                cls_token,
                pos_embed,
                encoder,
                encoder_norm_gain,
                encoder_norm_bias,
                decoder,
                cls_head,
            },
            b.specs,
        )
    }
}
