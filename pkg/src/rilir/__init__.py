"""Robust visual imitation learning on deterministic toy pixel environments.

Subpackages:
    autodiff        dense float64 reverse-mode autodiff on a linear tape
    nn              parameter sets, MLP layers, Adam, gradient checker
    envsim          toy pixel environments, perturbations, scripted experts
    representation  state encoder, inverse dynamics model, saliency
    rewards         optimal-transport and discriminator imitative rewards
    agent           TD3 learner with behavior-cloning initialization
    harness         CLI, run configuration, sweeps, summaries
"""

__version__ = "0.1.0"
