#pragma once

// Umbrella header.

#include "cvblind/binio.hpp"
#include "cvblind/blindwave.hpp"
#include "cvblind/config.hpp"
#include "cvblind/constellation.hpp"
#include "cvblind/dsp.hpp"
#include "cvblind/error.hpp"
#include "cvblind/fft.hpp"
#include "cvblind/harness.hpp"
#include "cvblind/rxsim.hpp"
#include "cvblind/secproof.hpp"
#include "cvblind/units.hpp"
