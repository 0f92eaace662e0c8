"""softbits: relaxed discrete random variables for stochastic computation graphs.

Discrete stochastic nodes sampled by perturbed-argmax, their tempered-softmax
relaxations with closed-form log-densities, a small reverse-mode autodiff
engine, gradient estimators, and a CLI that trains discrete latent-variable
models on the relaxed graph and evaluates the discrete graph.
"""

__version__ = "0.1.0"
