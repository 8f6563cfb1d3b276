use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};

use crate::encoder::{EncoderCache, EncoderOutput, EncoderParams};
use crate::error::{Error, Result};
use crate::head::{nll_and_grad, HeadCache, HeadParams, SchemaBank};
use crate::nn::DropoutPlan;
use crate::params::ParamSet;

/// Trainable parameters: the context encoder and the slot head.
///
/// Tensor names carry a `context.` or `head.` prefix, which optimizer
/// parameter groups match on.
#[derive(Clone, Debug, PartialEq)]
pub struct DstModel {
    pub context: EncoderParams,
    pub head: HeadParams,
}

impl ParamSet for DstModel {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, ArrayViewD<'a, f64>)) {
        self.context.visit(&mut |name, t| f(&format!("context.{name}"), t));
        self.head.visit(&mut |name, t| f(&format!("head.{name}"), t));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>)) {
        self.context.visit_mut(&mut |name, t| f(&format!("context.{name}"), t));
        self.head.visit_mut(&mut |name, t| f(&format!("head.{name}"), t));
    }
}

/// One forward pass over a context, with everything its backward needs.
pub struct ForwardPass {
    pub encoded: EncoderOutput,
    encoder_cache: EncoderCache,
    /// `(J × d)` slot features.
    pub features: Array2<f64>,
    head_cache: HeadCache,
}

impl ForwardPass {
    pub fn cls(&self) -> Array1<f64> {
        self.encoded.cls().to_owned()
    }
}

impl DstModel {
    pub fn new(context: EncoderParams, head: HeadParams) -> Result<Self> {
        if context.config.d_model != head.d_model() {
            return Err(Error::Shape {
                name: "head".into(),
                expected: vec![context.config.d_model],
                found: vec![head.d_model()],
            });
        }
        Ok(DstModel { context, head })
    }

    pub fn zeros_like(&self) -> Self {
        DstModel {
            context: self.context.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    pub fn forward(&self, ids: &[u32], plan: DropoutPlan, bank: &SchemaBank) -> Result<ForwardPass> {
        let (encoded, encoder_cache) = self.context.forward_ids(ids, plan)?;
        let (features, head_cache) = self.head.slot_features(&bank.slots, &encoded);
        Ok(ForwardPass {
            encoded,
            encoder_cache,
            features,
            head_cache,
        })
    }

    /// Backpropagates slot-feature and CLS gradients through head and encoder.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        d_features: Option<&Array2<f64>>,
        d_cls: Option<&Array1<f64>>,
        grads: &mut DstModel,
    ) {
        let mut d_hidden = match d_features {
            Some(dw) => self.head.backward(&pass.head_cache, dw, &mut grads.head),
            None => Array2::zeros(pass.encoded.hidden.raw_dim()),
        };
        if let Some(dc) = d_cls {
            let mut row = d_hidden.row_mut(0);
            row += dc;
        }
        self.context.backward(&pass.encoder_cache, &d_hidden, &mut grads.context);
    }
}

/// Summed slot losses of a pass and `dL/dw` for every slot row.
pub fn dst_loss_and_grad(pass: &ForwardPass, bank: &SchemaBank, gold: &[usize]) -> (f64, Array2<f64>) {
    let mut dw = Array2::zeros(pass.features.raw_dim());
    let mut loss = 0.0;
    for (j, (&g, values)) in gold.iter().zip(&bank.values).enumerate() {
        let (l, grad) = nll_and_grad(pass.features.row(j), values, g);
        loss += l;
        dw.row_mut(j).assign(&grad);
    }
    (loss, dw)
}
