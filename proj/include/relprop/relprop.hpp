#pragma once

// Umbrella header.

#include "relprop/data.hpp"
#include "relprop/error.hpp"
#include "relprop/evaluate.hpp"
#include "relprop/gradient.hpp"
#include "relprop/layers.hpp"
#include "relprop/lrp.hpp"
#include "relprop/model.hpp"
#include "relprop/model_io.hpp"
#include "relprop/relevance.hpp"
#include "relprop/render.hpp"
#include "relprop/rng.hpp"
#include "relprop/tensor.hpp"
#include "relprop/train.hpp"
