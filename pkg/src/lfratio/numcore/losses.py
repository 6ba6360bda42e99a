import numpy as np


def softplus(z):
    # log(1 + e^z) without overflow for large |z|
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def bce_with_logits(logit, label):
    """Binary cross entropy on a logit.

    Works elementwise on arrays. Returns ``(loss, dloss_dlogit)`` with
    ``loss = softplus(logit) - label * logit`` and gradient
    ``sigmoid(logit) - label``.
    """
    logit = np.asarray(logit, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if not np.all(np.isfinite(logit)):
        raise ValueError("bce_with_logits: non-finite logit")
    if not np.all((label == 0.0) | (label == 1.0)):
        raise ValueError("bce_with_logits: labels must be 0 or 1")
    loss = softplus(logit) - label * logit
    grad = sigmoid(logit) - label
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad
