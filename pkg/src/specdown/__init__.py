"""specdown: spectral flow simulation, autodiff, and resolution-agnostic
neural operators for downscaling gridded data."""

__version__ = "0.1.0"
