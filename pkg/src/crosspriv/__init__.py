"""Cross-reality location privacy simulator and hybrid diffusion PPO trainer."""
__version__ = "0.1.0"
