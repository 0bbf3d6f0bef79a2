#pragma once

// Umbrella header: mixture-of-linear-mixed-models variational inference,
// greedy model selection, gating relaxation, clustering evaluation, and the
// Gaussian-target convergence-rate analysis.

#include "mlmmvb/data.hpp"
#include "mlmmvb/elbo.hpp"
#include "mlmmvb/errors.hpp"
#include "mlmmvb/eval.hpp"
#include "mlmmvb/gating.hpp"
#include "mlmmvb/io.hpp"
#include "mlmmvb/linalg.hpp"
#include "mlmmvb/presets.hpp"
#include "mlmmvb/rates.hpp"
#include "mlmmvb/rng.hpp"
#include "mlmmvb/serialize.hpp"
#include "mlmmvb/state.hpp"
#include "mlmmvb/sweep.hpp"
#include "mlmmvb/vga.hpp"
