use crate::error::{Error, Result};
use crate::model::{DenseLayer, Network};
use crate::scalar::Scalar;

/// Classical momentum SGD: `v <- μ v + g`, `w <- w - lr v`.
///
/// With `momentum = 0` this is plain SGD.
pub fn sgd_step<S: Scalar>(
    net: &mut Network<S>,
    grads: &[DenseLayer<S>],
    lr: S,
    momentum: S,
) -> Result<()> {
    if grads.len() != net.layers.len() {
        return Err(Error::shape(
            "gradient depth",
            &[net.layers.len()],
            &[grads.len()],
        ));
    }
    for (layer, grad) in net.layers.iter().zip(grads) {
        let shapes_match = layer
            .arrays()
            .iter()
            .zip(grad.arrays())
            .all(|(p, g)| p.len() == g.len())
            && layer.arrays().len() == grad.arrays().len();
        if !shapes_match {
            return Err(Error::shape(
                "gradient layer",
                layer.weight.shape(),
                grad.weight.shape(),
            ));
        }
    }
    for ((layer, vel), grad) in net
        .layers
        .iter_mut()
        .zip(net.velocity.iter_mut())
        .zip(grads)
    {
        for ((p, v), g) in layer
            .arrays_mut()
            .into_iter()
            .zip(vel.arrays_mut())
            .zip(grad.arrays())
        {
            for ((w, vi), &gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *vi = momentum * *vi + gi;
                *w -= lr * *vi;
            }
        }
    }
    Ok(())
}
