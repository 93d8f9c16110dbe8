from .brdf import DomainError, SurfacePoint, SurfaceResponse, brdf, directional_albedo, surface_outgoing
from .field import GaussianField
from .propagation import (PathSet, PropagationDomainError, PropagationPath, RadioConfig, RadioLink,
                          SpatialSpectrum, fspl, path_powers, render_spectrum, trace_paths, trace_power)
