"""Directional finite-difference check of float32 autograd gradients.

The analytic directional derivative comes from the float32 model. The numeric one
is a central difference on a float64 copy, so the comparison isolates the
gradient code from float32 rounding in the difference quotient.
"""
import copy

import torch


def directional_errors(model, loss_fn, n_directions=20, h=1e-6, seed=0):
    """Relative errors ``|g.u - fd| / max(|g.u|, |fd|)`` over random unit directions.

    ``loss_fn(model)`` must be a deterministic scalar function of the parameters
    that casts its own inputs to the model dtype.
    """
    model = model.float()
    params = [p for p in model.parameters() if p.requires_grad]
    model.zero_grad()
    loss_fn(model).backward()
    grads = [p.grad.detach().double().clone() for p in params]

    ref = copy.deepcopy(model).double()
    ref_params = [p for p in ref.parameters() if p.requires_grad]
    base = [p.detach().clone() for p in ref_params]
    gen = torch.Generator().manual_seed(seed)
    errors = []
    for _ in range(n_directions):
        u = [torch.randn(p.shape, generator=gen, dtype=torch.float64) for p in base]
        norm = torch.sqrt(sum((x ** 2).sum() for x in u))
        u = [x / norm for x in u]
        analytic = float(sum((g * x).sum() for g, x in zip(grads, u)))
        with torch.no_grad():
            for p, b, x in zip(ref_params, base, u):
                p.copy_(b + h * x)
            plus = float(loss_fn(ref))
            for p, b, x in zip(ref_params, base, u):
                p.copy_(b - h * x)
            minus = float(loss_fn(ref))
            for p, b in zip(ref_params, base):
                p.copy_(b)
        numeric = (plus - minus) / (2 * h)
        scale = max(abs(analytic), abs(numeric), 1e-12)
        errors.append(abs(analytic - numeric) / scale)
    return errors
