use super::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Init {
    Glorot,
    Embedding,
    One,
    Zero,
}

/// One named parameter tensor, `rows × cols` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    /// Subject to weight decay (weight matrices only).
    pub decay: bool,
    pub(crate) init: Init,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub gate: usize,
    pub up: usize,
    pub down: usize,
}

/// Offsets of every parameter in the flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    pub d: usize,
    pub hidden: usize,
    pub patch_len: usize,
    pub patch_w: usize,
    pub patch_b: usize,
    pub cls: usize,
    pub mask: usize,
    pub blocks: Vec<BlockLayout>,
    pub recon_w: usize,
    pub recon_b: usize,
    pub pred_w: usize,
    pub pred_b: usize,
    pub specs: Vec<ParamSpec>,
    pub len: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.embed_dim;
        let hidden = cfg.mlp_ratio * d;
        let p = cfg.patch_len();
        let mut specs = Vec::new();
        let mut len = 0;
        let mut push = |name: String, rows: usize, cols: usize, init: Init| {
            let offset = len;
            len += rows * cols;
            specs.push(ParamSpec {
                name,
                offset,
                rows,
                cols,
                decay: init == Init::Glorot,
                init,
            });
            offset
        };
        let patch_w = push("patch.weight".into(), d, p, Init::Glorot);
        let patch_b = push("patch.bias".into(), 1, d, Init::Zero);
        let cls = push("cls".into(), 1, d, Init::Embedding);
        let mask = push("mask".into(), 1, d, Init::Embedding);
        let blocks = (0..cfg.depth)
            .map(|e| BlockLayout {
                ln1_g: push(format!("blocks.{e}.ln1.scale"), 1, d, Init::One),
                ln1_b: push(format!("blocks.{e}.ln1.bias"), 1, d, Init::Zero),
                wq: push(format!("blocks.{e}.attn.wq"), d, d, Init::Glorot),
                wk: push(format!("blocks.{e}.attn.wk"), d, d, Init::Glorot),
                wv: push(format!("blocks.{e}.attn.wv"), d, d, Init::Glorot),
                wo: push(format!("blocks.{e}.attn.wo"), d, d, Init::Glorot),
                ln2_g: push(format!("blocks.{e}.ln2.scale"), 1, d, Init::One),
                ln2_b: push(format!("blocks.{e}.ln2.bias"), 1, d, Init::Zero),
                gate: push(format!("blocks.{e}.mlp.gate"), hidden, d, Init::Glorot),
                up: push(format!("blocks.{e}.mlp.up"), hidden, d, Init::Glorot),
                down: push(format!("blocks.{e}.mlp.down"), d, hidden, Init::Glorot),
            })
            .collect();
        let recon_w = push("recon.weight".into(), p, d, Init::Glorot);
        let recon_b = push("recon.bias".into(), 1, p, Init::Zero);
        let pred_w = push("pred.weight".into(), p, d, Init::Glorot);
        let pred_b = push("pred.bias".into(), 1, p, Init::Zero);
        ParamLayout {
            d,
            hidden,
            patch_len: p,
            patch_w,
            patch_b,
            cls,
            mask,
            blocks,
            recon_w,
            recon_b,
            pred_w,
            pred_b,
            specs,
            len,
        }
    }

    /// Weight-decay mask, one flag per scalar parameter.
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.len];
        for s in self.specs.iter().filter(|s| s.decay) {
            m[s.offset..s.offset + s.len()].fill(true);
        }
        m
    }

    /// Spec containing flat index `i`.
    pub fn locate(&self, i: usize) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| (s.offset..s.offset + s.len()).contains(&i))
    }

    /// Range of the backbone (everything except the two output heads).
    pub fn backbone_range(&self) -> std::ops::Range<usize> {
        0..self.recon_w
    }

    pub fn pred_head_range(&self) -> std::ops::Range<usize> {
        self.pred_w..self.len
    }
}
