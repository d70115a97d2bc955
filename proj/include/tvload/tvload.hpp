#pragma once

// Umbrella header for the estimation library (the CLI lives in cli.hpp).

#include "tvload/bootstrap.hpp"
#include "tvload/csv.hpp"
#include "tvload/error.hpp"
#include "tvload/eval.hpp"
#include "tvload/factors.hpp"
#include "tvload/gls.hpp"
#include "tvload/panel.hpp"
#include "tvload/parallel.hpp"
#include "tvload/rng.hpp"
#include "tvload/sim.hpp"
#include "tvload/wavelet.hpp"
