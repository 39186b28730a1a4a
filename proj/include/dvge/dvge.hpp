#pragma once

// Umbrella header: the full library.

#include "dvge/autodiff.hpp"
#include "dvge/baselines.hpp"
#include "dvge/checkpoint.hpp"
#include "dvge/data.hpp"
#include "dvge/debias.hpp"
#include "dvge/errors.hpp"
#include "dvge/experiment.hpp"
#include "dvge/explain.hpp"
#include "dvge/fairness.hpp"
#include "dvge/nn.hpp"
#include "dvge/rng.hpp"
#include "dvge/sweep.hpp"
#include "dvge/tensor.hpp"
#include "dvge/vae.hpp"
