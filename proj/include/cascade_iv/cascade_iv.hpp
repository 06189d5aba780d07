#pragma once

#include "cascade_iv/bootstrap.hpp"
#include "cascade_iv/cascade.hpp"
#include "cascade_iv/dataset.hpp"
#include "cascade_iv/error.hpp"
#include "cascade_iv/estimate_set.hpp"
#include "cascade_iv/estimator.hpp"
#include "cascade_iv/fixtures.hpp"
#include "cascade_iv/io.hpp"
#include "cascade_iv/market.hpp"
#include "cascade_iv/mechanism.hpp"
#include "cascade_iv/synth.hpp"
