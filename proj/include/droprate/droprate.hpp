#pragma once

#include "droprate/errors.hpp"
#include "droprate/rng.hpp"
#include "droprate/model.hpp"
#include "droprate/calculus.hpp"
#include "droprate/minimizers.hpp"
#include "droprate/rates.hpp"
#include "droprate/flow.hpp"
#include "droprate/fitting.hpp"
#include "droprate/csv.hpp"
#include "droprate/whitening.hpp"
#include "droprate/config.hpp"
#include "droprate/sweep.hpp"
