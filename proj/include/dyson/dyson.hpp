#pragma once

// Numeric library; dyson/harness.hpp (needs json.hpp and threads) is separate.
#include "dyson/core.hpp"
#include "dyson/dbm.hpp"
#include "dyson/densities1d.hpp"
#include "dyson/ensembles.hpp"
#include "dyson/io.hpp"
#include "dyson/relaxation.hpp"
#include "dyson/scl.hpp"
#include "dyson/spectra.hpp"
#include "dyson/statistics.hpp"
