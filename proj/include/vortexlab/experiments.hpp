#pragma once

#include "vortexlab/experiments/config.hpp"
#include "vortexlab/experiments/csv.hpp"
#include "vortexlab/experiments/fit_plot.hpp"
#include "vortexlab/experiments/format.hpp"
#include "vortexlab/experiments/runner.hpp"
#include "vortexlab/experiments/svg.hpp"
