#pragma once

#include "taco/checkpoint.hpp"
#include "taco/errors.hpp"
#include "taco/losses.hpp"
#include "taco/metrics.hpp"
#include "taco/model.hpp"
#include "taco/rng.hpp"
#include "taco/synthdata.hpp"
#include "taco/tensor.hpp"
#include "taco/topology.hpp"
#include "taco/trainer.hpp"
#include "taco/volume.hpp"
