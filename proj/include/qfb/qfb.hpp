#pragma once

#include "qfb/config.hpp"
#include "qfb/errors.hpp"
#include "qfb/experiment.hpp"
#include "qfb/fxp.hpp"
#include "qfb/histo.hpp"
#include "qfb/latency.hpp"
#include "qfb/pipeline.hpp"
#include "qfb/rng.hpp"
#include "qfb/sigmodel.hpp"
