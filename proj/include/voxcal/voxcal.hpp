#pragma once

#include "voxcal/bench.hpp"
#include "voxcal/binning.hpp"
#include "voxcal/calibration.hpp"
#include "voxcal/error.hpp"
#include "voxcal/isotonic.hpp"
#include "voxcal/manifest.hpp"
#include "voxcal/metrics.hpp"
#include "voxcal/parallel.hpp"
#include "voxcal/rng.hpp"
#include "voxcal/synth.hpp"
#include "voxcal/volume.hpp"
