#pragma once

#include "vortexlab/error.hpp"
#include "vortexlab/euler3d_spectral.hpp"
#include "vortexlab/experiments.hpp"
#include "vortexlab/intermediate_flow.hpp"
#include "vortexlab/rate_fit.hpp"
#include "vortexlab/smallscale_linear.hpp"
#include "vortexlab/torus_kernels.hpp"
