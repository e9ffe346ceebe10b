#pragma once

#include "surrocon/autodiff.hpp"
#include "surrocon/config.hpp"
#include "surrocon/contrastive.hpp"
#include "surrocon/dataforge.hpp"
#include "surrocon/encoder.hpp"
#include "surrocon/errors.hpp"
#include "surrocon/format.hpp"
#include "surrocon/metrics.hpp"
#include "surrocon/rng.hpp"
#include "surrocon/tensor.hpp"
#include "surrocon/theory.hpp"
#include "surrocon/trainloop.hpp"
