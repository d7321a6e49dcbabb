#pragma once

#include "lst/error.hpp"
#include "lst/fixed_point.hpp"
#include "lst/matrix.hpp"
#include "lst/mnist_io.hpp"
#include "lst/model_io.hpp"
#include "lst/nn.hpp"
#include "lst/rng.hpp"
#include "lst/train.hpp"
