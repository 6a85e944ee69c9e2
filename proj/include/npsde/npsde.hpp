#pragma once

// Umbrella header.
#include "npsde/error.hpp"
#include "npsde/kernel.hpp"
#include "npsde/gpfield.hpp"
#include "npsde/simulate.hpp"
#include "npsde/sensitivity.hpp"
#include "npsde/objective.hpp"
#include "npsde/lbfgs.hpp"
#include "npsde/optimize.hpp"
#include "npsde/systems.hpp"
#include "npsde/io.hpp"
