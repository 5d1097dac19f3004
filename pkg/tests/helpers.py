"""Shared fixtures for the GAN gradient checks."""
import numpy as np

from eegshape import gan, numerics as nx
from eegshape.stimuli import canonical_shapes

MARGIN = 1e-2

# one line per acceptance criterion, printed again in the terminal summary
VERDICTS: list[str] = []


def as64(params):
    return {k: v.astype(np.float64) for k, v in params.items()}


def micro_batch(n=4, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 5
    return gan.GanBatch(reprs=rng.uniform(0, 2, (n, 40)), labels=labels,
                        noise=rng.standard_normal((n, 20)), real=canonical_shapes()[labels].astype(np.float64))


def kink_free_nets(batch, std=0.1, margin=MARGIN):
    """Float64 generator and discriminator with every discriminator ReLU input
    at least ``margin`` away from zero on this batch.

    Whole-image perturbations (e.g. of the generator's output bias) move
    hundreds of thousands of discriminator units at once; at a generic point
    some of them sit within a finite-difference step of a ReLU kink. Raising
    the conv biases puts the probe point where the loss is differentiable.
    """
    g, d = as64(gan.init_generator(3, std=std)), as64(gan.init_discriminator(4, std=std))
    fakes = [gan.generator_forward_batch(g, batch.reprs, batch.noise)[0],
             gan.generator_forward_batch(g, np.zeros_like(batch.reprs), batch.noise)[0]]
    images = np.concatenate([batch.real] + fakes)[..., None]
    for i in (1, 2):
        pre = nx.conv2d(images, d[f"conv{i}.kernels"], d[f"conv{i}.bias"])
        d[f"conv{i}.bias"] += np.maximum(0.0, margin - pre.min(axis=(0, 1, 2)))
        pre = nx.conv2d(images, d[f"conv{i}.kernels"], d[f"conv{i}.bias"])
        images = nx.maxpool2d(nx.relu(pre))[0]
    return g, d


def loss_check(which, batch, g, d, cfg, max_probes=8, seed=0):
    """grad_check of the generator or discriminator loss w.r.t. its own parameters."""
    if which == "generator":
        def run(p, with_grads=True):
            return gan.generator_loss(batch, p, d, cfg, with_grads=with_grads)
        params = g
    else:
        def run(p, with_grads=True):
            return gan.discriminator_loss(batch, g, p, cfg, with_grads=with_grads)
        params = d

    def fn(p):
        res = run(p)
        return res.total, res.grads

    return nx.grad_check(fn, params, max_probes=max_probes, seed=seed,
                         loss_fn=lambda p: run(p, with_grads=False).total)


def verdict(n, title, ok, detail=""):
    line = f"criterion {n} [{'PASS' if ok else 'FAIL'}] {title}" + (f": {detail}" if detail else "")
    VERDICTS.append(line)
    print(line)
    return ok
